"""Shared test utilities: central finite differences against autograd."""

import torch


def central_difference(loss_fn, tensor: torch.Tensor, flat_index: int, delta: float) -> float:
    """(f(x+d) - f(x-d)) / 2d for one coordinate of a parameter tensor."""
    flat = tensor.data.view(-1)
    orig = flat[flat_index].item()
    with torch.no_grad():
        flat[flat_index] = orig + delta
        plus = float(loss_fn())
        flat[flat_index] = orig - delta
        minus = float(loss_fn())
        flat[flat_index] = orig
    return (plus - minus) / (2.0 * delta)


def analytic_grad(loss_fn, params) -> dict:
    """Autograd gradients for a list of named parameters."""
    for _, p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    return {name: p.grad.detach().clone() for name, p in params}


def check_param_gradients(loss_fn, named_params, probes_per_tensor, delta, rel_tol, rng):
    """Compare autograd and central differences at random coordinates.

    Returns the worst relative error observed. `loss_fn` must be
    deterministic and re-runnable.
    """
    grads = analytic_grad(loss_fn, named_params)
    worst = 0.0
    checked = 0
    for name, param in named_params:
        n = param.numel()
        for _ in range(probes_per_tensor):
            idx = int(rng.integers(n))
            fd = central_difference(loss_fn, param, idx, delta)
            ag = float(grads[name].view(-1)[idx])
            scale = max(abs(fd), abs(ag), 1e-8)
            rel = abs(fd - ag) / scale
            worst = max(worst, rel)
            checked += 1
            assert rel <= rel_tol, (
                f"gradient mismatch on {name}[{idx}]: fd={fd:.3e} autograd={ag:.3e} "
                f"rel={rel:.3e} > {rel_tol}"
            )
    return worst, checked
