"""Reverse-process sampling, plug-and-play classifier guidance, and MBR.

Guidance nudges each intermediate latent with gradient updates on
``lam * log p(x | x_t) + log p(c | x)`` where the first term is the
Gaussian transition density around the model's prediction (the fluency
anchor) and the second comes from a small classifier trained on diffusion
latents. Length control is classifier-free: the sampler simply allocates
exactly the target number of positions.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Corpus, TokenSequence, Vocabulary, detokenize
from .denoiser import Denoiser
from .importance import NoiseStrategy, assign_buckets
from .schedule import MaskState, NoiseSchedule, q_sample_batch, t_start

CLASSIFIER_VERSION = 1


class ControlKind(str, Enum):
    LENGTH = "length"
    CONTENT = "content"
    POS = "pos"


@dataclass(frozen=True)
class ControlSpec:
    """A generation constraint: target length, field=value mention, or POS tags."""

    kind: ControlKind
    length: int | None = None
    field: str | None = None
    value: str | None = None
    tags: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind is ControlKind.LENGTH:
            if self.length is None or self.length < 1:
                raise ValueError("length control needs a target >= 1")
        elif self.kind is ControlKind.CONTENT:
            if not self.field or not self.value:
                raise ValueError("content control needs field and value")
        elif self.kind is ControlKind.POS:
            if not self.tags:
                raise ValueError("pos control needs a tag sequence")

    @classmethod
    def parse(cls, text: str) -> "ControlSpec":
        """Parse CLI syntax: length=7 | content=food:japanese | pos=NOUN VERB."""
        if "=" not in text:
            raise ValueError(f"malformed control spec {text!r}")
        head, _, payload = text.partition("=")
        head = head.strip().lower()
        payload = payload.strip()
        if head == "length":
            return cls(kind=ControlKind.LENGTH, length=int(payload))
        if head == "content":
            field, sep, value = payload.partition(":")
            if not sep:
                raise ValueError("content control must look like content=field:value")
            return cls(kind=ControlKind.CONTENT, field=field.strip(), value=value.strip())
        if head == "pos":
            return cls(kind=ControlKind.POS, tags=tuple(payload.upper().split()))
        raise ValueError(f"unknown control kind {head!r}")


@dataclass
class GuidanceConfig:
    lam: float = 0.01
    updates: int = 3
    eta: float = 0.1
    candidates: int = 5
    stochastic: bool = False
    update_rule: str = "adam"
    projection: bool = True

    def __post_init__(self):
        if self.updates < 0:
            raise ValueError("updates must be >= 0")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        if self.update_rule not in ("adam", "sgd"):
            raise ValueError("update_rule must be 'adam' or 'sgd'")


class LatentClassifier(nn.Module):
    """Small network scoring log p(control | latent, t).

    Content classifiers pool positions and predict one class per sequence;
    POS classifiers predict a tag per position.
    """

    def __init__(
        self,
        kind: ControlKind,
        labels: tuple[str, ...],
        latent_dim: int,
        T: int,
        hidden: int = 64,
        field: str | None = None,
    ):
        super().__init__()
        if kind is ControlKind.LENGTH:
            raise ValueError("length control is classifier-free")
        self.kind = kind
        self.labels = tuple(labels)
        self.latent_dim = latent_dim
        self.T = T
        self.hidden = hidden
        self.field = field
        self.inp = nn.Linear(latent_dim, hidden)
        self.time_emb = nn.Embedding(T + 1, hidden)
        self.mid = nn.Linear(hidden, hidden)
        self.head = nn.Linear(hidden, len(self.labels))

    def features(self, x: torch.Tensor, t: int | torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(0)
        B = x.shape[0]
        if isinstance(t, int):
            t = torch.full((B,), t, dtype=torch.long)
        # tanh keeps log p(c|x) smooth in x, which the finite-difference
        # gradient checks rely on.
        z = torch.tanh(self.inp(x) + self.time_emb(t).unsqueeze(1))
        return torch.tanh(self.mid(z))

    def forward(
        self,
        x: torch.Tensor,
        t: int | torch.Tensor,
        pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """(B, C) class logits for content, (B, L, C) tag logits for POS."""
        z = self.features(x, t)
        if self.kind is ControlKind.POS:
            return self.head(z)
        if pad_mask is not None:
            keep = pad_mask.unsqueeze(-1).to(z.dtype)
            pooled = (z * keep).sum(dim=1) / keep.sum(dim=1).clamp(min=1.0)
        else:
            pooled = z.mean(dim=1)
        return self.head(pooled)

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"label {label!r} not in classifier label space") from None

    def log_prob(self, x: torch.Tensor, t: int | torch.Tensor, control: ControlSpec) -> torch.Tensor:
        """Differentiable log p(control | x, t), summed over the batch."""
        if control.kind is not self.kind:
            raise ValueError(
                f"classifier kind {self.kind.value} cannot score {control.kind.value} control"
            )
        logits = self.forward(x, t)
        if self.kind is ControlKind.CONTENT:
            if self.field is not None and control.field != self.field:
                raise ValueError(
                    f"classifier was trained for field {self.field!r}, got {control.field!r}"
                )
            idx = self.label_index(control.value)
            return F.log_softmax(logits, dim=-1)[:, idx].sum()
        tags = control.tags
        if logits.shape[1] != len(tags):
            raise ValueError("tag sequence length does not match latent length")
        idxs = torch.tensor([self.label_index(tag) for tag in tags], dtype=torch.long)
        logp = F.log_softmax(logits, dim=-1)
        return logp.gather(-1, idxs.view(1, -1, 1).expand(logits.shape[0], -1, 1)).sum()


def reverse_step(
    x_t: torch.Tensor,
    t: int,
    model: Denoiser,
    schedule: NoiseSchedule,
    config: GuidanceConfig,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """One unguided reverse step: the transition mean, plus sqrt(beta_t)
    noise in stochastic mode."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step {t} outside [1, {schedule.T}]")
    with torch.no_grad():
        mu = model.transition(x_t, t)
    if not config.stochastic:
        return mu
    beta = float(schedule.beta[t])
    noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + math.sqrt(beta) * noise


def fluency_gradient(x: torch.Tensor, mu: torch.Tensor, beta_t: float) -> torch.Tensor:
    """Analytic gradient of log p(x | x_t) = -||x - mu||^2 / (2 beta_t)."""
    return (mu - x) / beta_t


def control_gradient(
    x: torch.Tensor,
    t: int,
    classifier: LatentClassifier,
    control: ControlSpec,
) -> torch.Tensor:
    """Gradient of the classifier log-probability with respect to the latent."""
    leaf = x.detach().requires_grad_(True)
    logp = classifier.log_prob(leaf, t, control)
    (grad,) = torch.autograd.grad(logp, leaf)
    return grad.detach()


def guidance_gradient(
    x: torch.Tensor,
    mu: torch.Tensor,
    beta_t: float,
    t: int,
    classifier: LatentClassifier,
    control: ControlSpec,
    lam: float,
) -> torch.Tensor:
    """Full guided ascent direction: lam * fluency + control."""
    return lam * fluency_gradient(x, mu, beta_t) + control_gradient(
        x, t, classifier, control
    )


def guided_step(
    x_t: torch.Tensor,
    t: int,
    model: Denoiser,
    classifier: LatentClassifier | None,
    control: ControlSpec | None,
    schedule: NoiseSchedule,
    config: GuidanceConfig,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Reverse step followed by K classifier-guided updates on the latent.

    With updates=0 or no classifier this is exactly reverse_step. The
    update direction follows config.update_rule; Adam state is reset at
    every diffusion step.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step {t} outside [1, {schedule.T}]")
    with torch.no_grad():
        mu = model.transition(x_t, t)
    x = mu
    if config.stochastic:
        noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        x = mu + math.sqrt(float(schedule.beta[t])) * noise
    if config.updates == 0 or classifier is None or control is None:
        return x
    beta = float(schedule.beta[t])
    t_cls = t - 1
    m = torch.zeros_like(x)
    v = torch.zeros_like(x)
    b1, b2, adam_eps = 0.9, 0.999, 1e-8
    for k in range(1, config.updates + 1):
        grad = guidance_gradient(x, mu, beta, t_cls, classifier, control, config.lam)
        if config.update_rule == "adam":
            m = b1 * m + (1.0 - b1) * grad
            v = b2 * v + (1.0 - b2) * grad.pow(2)
            m_hat = m / (1.0 - b1**k)
            v_hat = v / (1.0 - b2**k)
            x = x + config.eta * m_hat / (v_hat.sqrt() + adam_eps)
        else:
            x = x + config.eta * grad
    if not torch.isfinite(x).all():
        raise RuntimeError(f"guided step produced non-finite latent at t={t}")
    return x


def readout_ids(
    x: torch.Tensor, model: Denoiser, vocab: Vocabulary, rounding: bool = False
) -> torch.Tensor:
    """Final readout of a latent block; never emits PAD or MASK.

    Generation decodes over content tokens only, so the structural length
    of a sample is exactly its non-PAD length.
    """
    if rounding:
        emb = model.token_emb.weight
        dist = x.pow(2).sum(-1, keepdim=True) - 2.0 * x @ emb.t() + emb.pow(2).sum(-1)
        dist[..., vocab.pad_id] = float("inf")
        dist[..., vocab.mask_id] = float("inf")
        return dist.argmin(dim=-1)
    logits = model.logits(x)
    logits[..., vocab.pad_id] = float("-inf")
    logits[..., vocab.mask_id] = float("-inf")
    return logits.argmax(dim=-1)


def committed_count(length: int, buckets: int, T: int, t: int) -> int:
    """How many positions the canonical bucket staging has unmasked at step t.

    Buckets split a length-l sentence near-equally; bucket b is unmasked at
    step t iff its activation step t_start(b) - 1 >= t. Independent of which
    concrete tokens land in which bucket, so the sampler can schedule
    commitments before the sentence exists.
    """
    base, rem = divmod(length, buckets)
    count = 0
    for b in range(1, buckets + 1):
        size = base + (1 if b <= rem else 0)
        if t_start(b, T, buckets) - 1 >= t:
            count += size
    return count


def _non_mask_readout(logits: torch.Tensor, vocab: Vocabulary):
    """Per-position best content token and its probability."""
    restricted = logits.clone()
    restricted[..., vocab.pad_id] = float("-inf")
    restricted[..., vocab.mask_id] = float("-inf")
    probs = F.softmax(restricted, dim=-1)
    conf, tokens = probs.max(dim=-1)
    return tokens, conf


def sample_candidates(
    model: Denoiser,
    schedule: NoiseSchedule,
    vocab: Vocabulary,
    length: int,
    n_candidates: int,
    config: GuidanceConfig,
    generator: torch.Generator | None = None,
    classifier: LatentClassifier | None = None,
    control: ControlSpec | None = None,
    trace: bool = False,
    rounding: bool = False,
    buckets: int = 3,
):
    """Run the reverse process from pure noise for a batch of candidates.

    With config.projection (the default) the chain state is re-grounded on
    the training manifold after every model call: committed tokens ride as
    clean embeddings, uncommitted positions keep the frozen initial noise,
    and the number of committed positions follows the bucket staging
    schedule with positions chosen by model confidence. The literal
    free-running latent chain (projection=False) is kept for reference but
    collapses to the all-mask basin on small models.

    Returns a list of TokenSequence; with trace=True also returns the
    intermediate decodes, one (n_candidates, length) id tensor per reverse
    step, for inspecting generation order.
    """
    if not 1 <= length <= model.config.max_len:
        raise ValueError(f"length {length} outside [1, {model.config.max_len}]")
    model.eval()
    h = model.config.hidden
    init_noise = torch.randn((n_candidates, length, h), generator=generator)
    snapshots: list[torch.Tensor] = []

    if not config.projection:
        x = init_noise
        for t in range(schedule.T, 0, -1):
            x = guided_step(x, t, model, classifier, control, schedule, config,
                            generator)
            if trace:
                with torch.no_grad():
                    snapshots.append(model.decode_ids(x))
        with torch.no_grad():
            final_ids = readout_ids(x, model, vocab, rounding=rounding)
    else:
        hypothesis = torch.full((n_candidates, length), vocab.mask_id,
                                dtype=torch.long)
        for t in range(schedule.T, 0, -1):
            committed = hypothesis != vocab.mask_id
            with torch.no_grad():
                clean = model.embed(hypothesis)
            x_t = torch.where(committed.unsqueeze(-1), clean, init_noise)
            mu = guided_step(x_t, t, model, classifier, control, schedule,
                             config, generator)
            with torch.no_grad():
                if rounding:
                    emb = model.token_emb.weight
                    dist = (mu.pow(2).sum(-1, keepdim=True) - 2.0 * mu @ emb.t()
                            + emb.pow(2).sum(-1))
                    dist[..., vocab.pad_id] = float("inf")
                    dist[..., vocab.mask_id] = float("inf")
                    conf, tokens = (-dist).softmax(dim=-1).max(dim=-1)
                else:
                    tokens, conf = _non_mask_readout(model.logits(mu), vocab)
            n_commit = committed_count(length, buckets, schedule.T, t - 1)
            hypothesis = torch.full_like(hypothesis, vocab.mask_id)
            if n_commit > 0:
                keep = conf.topk(n_commit, dim=-1).indices
                hypothesis.scatter_(1, keep, tokens.gather(1, keep))
            if trace:
                snapshots.append(hypothesis.clone())
        final_ids = hypothesis

    outputs = []
    for row in final_ids:
        ids = tuple(int(i) for i in row)
        outputs.append(TokenSequence(ids=ids, source=detokenize(ids, vocab)))
    if trace:
        return outputs, snapshots
    return outputs


def sample(
    model: Denoiser,
    schedule: NoiseSchedule,
    vocab: Vocabulary,
    length: int,
    config: GuidanceConfig,
    generator: torch.Generator | None = None,
    classifier: LatentClassifier | None = None,
    control: ControlSpec | None = None,
    rounding: bool = False,
    buckets: int = 3,
) -> TokenSequence:
    """Generate a single sequence of exactly `length` tokens."""
    return sample_candidates(
        model, schedule, vocab, length, 1, config, generator,
        classifier=classifier, control=control, rounding=rounding,
        buckets=buckets,
    )[0]


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Token-level edit distance."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        current = [i]
        for j, tok_b in enumerate(b, start=1):
            cost = 0 if tok_a == tok_b else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def bleu2(hyp: Sequence, ref: Sequence) -> float:
    """BLEU-2: geometric mean of 1/2-gram modified precision with brevity
    penalty. Callers guarantee both sides have at least two tokens."""
    score = 1.0
    for n in (1, 2):
        hyp_ngrams = Counter(tuple(hyp[i : i + n]) for i in range(len(hyp) - n + 1))
        ref_ngrams = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
        overlap = sum(min(c, ref_ngrams[g]) for g, c in hyp_ngrams.items())
        total = sum(hyp_ngrams.values())
        if overlap == 0:
            return 0.0
        score *= overlap / total
    score = math.sqrt(score)
    if len(hyp) < len(ref):
        score *= math.exp(1.0 - len(ref) / len(hyp))
    return score


def _ids_of(candidate) -> tuple:
    if isinstance(candidate, TokenSequence):
        return candidate.ids
    return tuple(candidate)


def pairwise_token_loss(a, b) -> float:
    """Default MBR loss: negative BLEU-2, with a normalized edit-distance
    fallback when either side is too short for bigrams."""
    ids_a, ids_b = _ids_of(a), _ids_of(b)
    if min(len(ids_a), len(ids_b)) < 2:
        denom = max(len(ids_a), len(ids_b), 1)
        return levenshtein(ids_a, ids_b) / denom
    return -bleu2(ids_a, ids_b)


def mbr_argmin(candidates: list, loss_fn: Callable | None = None) -> int:
    """Index of the candidate with the lowest mean pairwise loss; ties go
    to the lowest index."""
    if not candidates:
        raise ValueError("empty candidate list")
    if loss_fn is None:
        loss_fn = pairwise_token_loss
    n = len(candidates)
    if n == 1:
        return 0
    best_idx = 0
    best_risk = None
    for i, cand in enumerate(candidates):
        risk = sum(loss_fn(cand, other) for j, other in enumerate(candidates) if j != i)
        risk /= n - 1
        if best_risk is None or risk < best_risk:
            best_idx, best_risk = i, risk
    return best_idx


def mbr_select(candidates: list, loss_fn: Callable | None = None):
    """The minimum-Bayes-risk candidate under the pairwise loss."""
    return candidates[mbr_argmin(candidates, loss_fn)]


def length_sampler_from_histogram(histogram: dict[int, int]) -> Callable:
    """Sampler over sequence lengths proportional to training counts."""
    if not histogram:
        raise ValueError("empty length histogram")
    lengths = sorted(histogram)
    weights = torch.tensor([float(histogram[l]) for l in lengths])

    def draw(generator: torch.Generator | None = None) -> int:
        idx = int(torch.multinomial(weights, 1, generator=generator))
        return lengths[idx]

    return draw


def generate_outputs(
    model: Denoiser,
    schedule: NoiseSchedule,
    vocab: Vocabulary,
    n_outputs: int,
    config: GuidanceConfig,
    generator: torch.Generator | None = None,
    control: ControlSpec | None = None,
    classifier: LatentClassifier | None = None,
    length_sampler: Callable | None = None,
    use_mbr: bool = False,
    rounding: bool = False,
    loss_fn: Callable | None = None,
    buckets: int = 3,
) -> list[TokenSequence]:
    """Generate n_outputs sequences, optionally MBR-selected from
    config.candidates samples each.

    The per-output length comes from the control (length target or POS tag
    count) or otherwise from `length_sampler`.
    """
    if control is not None and control.kind is not ControlKind.LENGTH:
        if classifier is None:
            raise ValueError(f"{control.kind.value} control requires a classifier")
    outputs = []
    for _ in range(n_outputs):
        if control is not None and control.kind is ControlKind.LENGTH:
            length = control.length
        elif control is not None and control.kind is ControlKind.POS:
            length = len(control.tags)
        elif length_sampler is not None:
            length = length_sampler(generator)
        else:
            raise ValueError("unconditional sampling needs a length sampler")
        n_cand = config.candidates if use_mbr else 1
        candidates = sample_candidates(
            model, schedule, vocab, length, n_cand, config, generator,
            classifier=classifier, control=control, rounding=rounding,
            buckets=buckets,
        )
        outputs.append(mbr_select(candidates, loss_fn) if use_mbr else candidates[0])
    return outputs


def train_latent_classifier(
    corpus: Corpus,
    model: Denoiser,
    schedule: NoiseSchedule,
    kind: ControlKind,
    *,
    field: str | None = None,
    tagger: Callable[[str], str] | None = None,
    tag_set: tuple[str, ...] | None = None,
    strategy: NoiseStrategy = NoiseStrategy.MASK_ENTROPY_REL,
    buckets: int = 3,
    steps: int = 300,
    lr: float = 1e-3,
    batch_size: int = 32,
    hidden: int = 64,
    seed: int = 0,
) -> tuple[LatentClassifier, float]:
    """Train a guidance classifier on q_sample latents at random steps.

    Content classifiers need labeled attributes for `field`; POS
    classifiers need a tagger and tag set. Returns the classifier and its
    held-out accuracy (sequence accuracy for content, token accuracy for
    POS).
    """
    if kind is ControlKind.CONTENT:
        if field is None:
            raise ValueError("content classifier needs a field")
        examples = [
            (i, corpus.attributes[i][field])
            for i in range(corpus.n_sentences)
            if corpus.attributes[i] and field in corpus.attributes[i]
        ]
        if not examples:
            raise ValueError(f"no labels: no sentence carries attribute {field!r}")
        labels = tuple(sorted({value for _, value in examples}))
    elif kind is ControlKind.POS:
        if tagger is None or tag_set is None:
            raise ValueError("pos classifier needs a tagger and tag set")
        examples = [(i, None) for i in range(corpus.n_sentences)]
        labels = tuple(tag_set)
    else:
        raise ValueError("length control is classifier-free")

    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    classifier = LatentClassifier(
        kind, labels, model.config.hidden, schedule.T, hidden=hidden, field=field
    )
    label_to_idx = {lab: i for i, lab in enumerate(labels)}

    states = []
    token_tags: list[list[int] | None] = []
    for i, _ in examples:
        sent = corpus.sentences[i]
        assignment = assign_buckets(strategy, sent, corpus, buckets, tagger=tagger)
        states.append(MaskState.from_buckets(assignment, schedule.T))
        if kind is ControlKind.POS:
            words = [corpus.vocab.token_for(w) for w in sent.ids]
            token_tags.append([label_to_idx[tagger(w)] for w in words])
        else:
            token_tags.append(None)

    heldout = [j for j in range(len(examples)) if j % 5 == 4]
    train_pool = [j for j in range(len(examples)) if j % 5 != 4] or heldout

    optimizer = torch.optim.Adam(classifier.parameters(), lr=lr)
    model.eval()

    def make_batch(pool_indices):
        chosen = [examples[j] for j in pool_indices]
        max_len = max(len(corpus.sentences[i]) for i, _ in chosen)
        B = len(chosen)
        pad_id = corpus.vocab.pad_id
        ids = torch.full((B, max_len), pad_id, dtype=torch.long)
        tag_targets = torch.full((B, max_len), -100, dtype=torch.long)
        class_targets = torch.zeros(B, dtype=torch.long)
        act = torch.full((B, max_len), schedule.T, dtype=torch.long)
        for row, j in enumerate(pool_indices):
            i, value = examples[j]
            sent = corpus.sentences[i]
            L = len(sent)
            ids[row, :L] = torch.tensor(sent.ids, dtype=torch.long)
            act[row, :L] = torch.tensor(states[j].activation, dtype=torch.long)
            if kind is ControlKind.CONTENT:
                class_targets[row] = label_to_idx[value]
            else:
                tag_targets[row, :L] = torch.tensor(token_tags[j], dtype=torch.long)
        pad_mask = ids != pad_id
        return ids, act, pad_mask, class_targets, tag_targets

    classifier.train()
    for _ in range(steps):
        picks = torch.randint(len(train_pool), (min(batch_size, len(train_pool)),), generator=gen)
        pool_indices = [train_pool[int(p)] for p in picks]
        ids, act, pad_mask, class_targets, tag_targets = make_batch(pool_indices)
        t = torch.randint(0, schedule.T, (ids.shape[0],), generator=gen)
        with torch.no_grad():
            x = q_sample_batch(model.embed(ids), t, act, schedule, gen)
        logits = classifier(x, t, pad_mask)
        if kind is ControlKind.CONTENT:
            loss = F.cross_entropy(logits, class_targets)
        else:
            loss = F.cross_entropy(
                logits.reshape(-1, len(labels)), tag_targets.reshape(-1), ignore_index=-100
            )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    classifier.eval()

    correct = total = 0
    eval_pool = heldout or train_pool
    for j in eval_pool:
        ids, act, pad_mask, class_targets, tag_targets = make_batch([j])
        t = torch.randint(0, schedule.T, (1,), generator=gen)
        with torch.no_grad():
            x = q_sample_batch(model.embed(ids), t, act, schedule, gen)
            logits = classifier(x, t, pad_mask)
        if kind is ControlKind.CONTENT:
            correct += int(logits.argmax(dim=-1) == class_targets)
            total += 1
        else:
            pred = logits.argmax(dim=-1)
            keep = tag_targets != -100
            correct += int((pred[keep] == tag_targets[keep]).sum())
            total += int(keep.sum())
    accuracy = correct / total if total else 0.0
    return classifier, accuracy


def save_classifier(path: str | Path, classifier: LatentClassifier) -> None:
    payload = {
        "format_version": CLASSIFIER_VERSION,
        "kind": classifier.kind.value,
        "labels": list(classifier.labels),
        "latent_dim": classifier.latent_dim,
        "T": classifier.T,
        "hidden": classifier.hidden,
        "field": classifier.field,
        "state_dict": classifier.state_dict(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_classifier(path: str | Path) -> LatentClassifier:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format_version") != CLASSIFIER_VERSION:
        raise ValueError("unsupported classifier checkpoint version")
    classifier = LatentClassifier(
        ControlKind(payload["kind"]),
        tuple(payload["labels"]),
        payload["latent_dim"],
        payload["T"],
        hidden=payload["hidden"],
        field=payload.get("field"),
    )
    classifier.load_state_dict(payload["state_dict"])
    classifier.eval()
    return classifier
