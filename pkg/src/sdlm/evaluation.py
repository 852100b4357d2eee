"""Control-task accuracy oracles, teacher-LM fluency, and the ablation
harness over noise strategies and training objectives.

The oracles are pure functions of (outputs, targets). The POS tagger is a
deterministic lexicon lookup shipped as package data and is an evaluation
fixture, not a modeling claim; unknown words tag as NOUN.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Corpus, TokenSequence, Vocabulary, word_tokens
from .denoiser import Block, ModelConfig
from .guidance import (
    ControlKind,
    ControlSpec,
    GuidanceConfig,
    generate_outputs,
    length_sampler_from_histogram,
    train_latent_classifier,
)
from .importance import NoiseStrategy
from .schedule import make_schedule
from .training import OBJECTIVE_CE, OBJECTIVE_L2, TrainConfig, train

TAG_SET = (
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "NOUN",
    "NUM", "PART", "PRON", "PUNCT", "VERB",
)

TABLE4_STRATEGY_ORDER = tuple(NoiseStrategy)
TABLE5_OBJECTIVE_ORDER = (OBJECTIVE_L2, OBJECTIVE_CE)


def _load_default_lexicon() -> dict[str, str]:
    data = importlib.resources.files("sdlm.data").joinpath("pos_lexicon.json")
    return json.loads(data.read_text(encoding="utf-8"))


class PosTagger:
    """Most-frequent-tag lexicon lookup; unknown words fall back to NOUN."""

    def __init__(self, lexicon: dict[str, str] | None = None):
        self.lexicon = dict(lexicon) if lexicon is not None else _load_default_lexicon()

    def __call__(self, word: str) -> str:
        return self.lexicon.get(word.lower(), "NOUN")

    def tag_tokens(self, tokens: list[str]) -> list[str]:
        return [self(tok) for tok in tokens]

    def tag_sequence(self, seq: TokenSequence, vocab: Vocabulary) -> list[str]:
        return [self(vocab.token_for(i)) for i in seq.ids]


def length_accuracy(outputs: list, targets: list[int]) -> float:
    """Fraction of outputs whose length is within +/-2 of its target."""
    if len(outputs) != len(targets):
        raise ValueError("outputs and targets must have equal length")
    hits = sum(1 for out, tgt in zip(outputs, targets) if abs(len(out) - tgt) <= 2)
    return hits / len(outputs)


def _contains_subsequence(tokens: list[str], needle: list[str]) -> bool:
    if not needle or len(needle) > len(tokens):
        return False
    for i in range(len(tokens) - len(needle) + 1):
        if tokens[i : i + len(needle)] == needle:
            return True
    return False


def content_accuracy(outputs: list[list[str]], specs: list) -> float:
    """Fraction of outputs mentioning their target value verbatim.

    `specs` entries are ControlSpec(content) or raw value strings;
    multi-word values must appear as a contiguous token run.
    """
    if len(outputs) != len(specs):
        raise ValueError("outputs and specs must have equal length")
    hits = 0
    for tokens, spec in zip(outputs, specs):
        value = spec.value if isinstance(spec, ControlSpec) else str(spec)
        hits += _contains_subsequence([t.lower() for t in tokens], word_tokens(value))
    return hits / len(outputs)


def pos_accuracy(outputs: list[list[str]], tag_specs: list, tagger: PosTagger) -> float:
    """Fraction of outputs whose tag sequence matches the spec exactly.

    A length mismatch counts as a miss rather than an error.
    """
    if len(outputs) != len(tag_specs):
        raise ValueError("outputs and tag_specs must have equal length")
    hits = 0
    for tokens, spec in zip(outputs, tag_specs):
        tags = list(spec.tags) if isinstance(spec, ControlSpec) else list(spec)
        hits += tagger.tag_tokens(tokens) == tags
    return hits / len(outputs)


@dataclass(frozen=True)
class TeacherConfig:
    vocab_size: int
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    ffn_mult: int = 4
    dropout: float = 0.1
    max_len: int = 64


class TeacherLM(nn.Module):
    """Small causal transformer used only to score fluency.

    Sequences are scored left to right with PAD standing in as the
    begin-of-sequence symbol (PAD never occurs inside real sentences).
    """

    def __init__(self, config: TeacherConfig):
        super().__init__()
        self.config = config
        h = config.hidden
        self.token_emb = nn.Embedding(config.vocab_size, h)
        self.pos_emb = nn.Embedding(config.max_len + 1, h)
        self.blocks = nn.ModuleList(
            Block(h, config.heads, config.ffn_mult, config.dropout, causal=True)
            for _ in range(config.layers)
        )
        self.final_norm = nn.LayerNorm(h)
        self.head = nn.Linear(h, config.vocab_size)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        B, L = ids.shape
        x = self.token_emb(ids) + self.pos_emb(torch.arange(L)).unsqueeze(0)
        for block in self.blocks:
            x = block(x)
        return self.head(self.final_norm(x))

    def sequence_nll(self, ids: list[int], bos_id: int) -> tuple[float, int]:
        """Total negative log-likelihood and token count for one sequence."""
        inp = torch.tensor([[bos_id] + list(ids[:-1])], dtype=torch.long)
        tgt = torch.tensor([list(ids)], dtype=torch.long)
        with torch.no_grad():
            logits = self.forward(inp)
            nll = F.cross_entropy(
                logits.view(-1, logits.shape[-1]), tgt.view(-1), reduction="sum"
            )
        return float(nll), len(ids)


def train_teacher(
    corpus: Corpus,
    config: TeacherConfig | None = None,
    steps: int = 300,
    lr: float = 1e-3,
    batch_size: int = 32,
    seed: int = 0,
) -> TeacherLM:
    """Fit the teacher LM on one split with next-token cross entropy."""
    if config is None:
        config = TeacherConfig(vocab_size=corpus.vocab.size)
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    teacher = TeacherLM(config)
    optimizer = torch.optim.AdamW(teacher.parameters(), lr=lr)
    pad_id = corpus.vocab.pad_id
    teacher.train()
    for _ in range(steps):
        idx = torch.randint(corpus.n_sentences, (batch_size,), generator=gen)
        chosen = [corpus.sentences[int(i)] for i in idx]
        max_len = max(len(s) for s in chosen)
        inp = torch.full((batch_size, max_len), pad_id, dtype=torch.long)
        tgt = torch.full((batch_size, max_len), pad_id, dtype=torch.long)
        for row, sent in enumerate(chosen):
            L = len(sent)
            inp[row, 0] = pad_id
            inp[row, 1:L] = torch.tensor(sent.ids[: L - 1], dtype=torch.long)
            tgt[row, :L] = torch.tensor(sent.ids, dtype=torch.long)
        logits = teacher(inp)
        loss = F.cross_entropy(
            logits.view(-1, logits.shape[-1]), tgt.view(-1), ignore_index=pad_id
        )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    teacher.eval()
    return teacher


def fluency_perplexity(outputs: list, teacher: TeacherLM, bos_id: int = 0) -> float:
    """exp(mean token NLL) of the outputs under the teacher."""
    if not outputs:
        raise ValueError("no outputs to score")
    total_nll = 0.0
    total_tokens = 0
    for out in outputs:
        ids = out.ids if isinstance(out, TokenSequence) else list(out)
        if not ids:
            raise ValueError("empty output sequence")
        nll, count = teacher.sequence_nll(list(ids), bos_id)
        total_nll += nll
        total_tokens += count
    return float(torch.exp(torch.tensor(total_nll / total_tokens)))


def save_teacher(path: str | Path, teacher: TeacherLM) -> None:
    payload = {"config": asdict(teacher.config), "state_dict": teacher.state_dict()}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_teacher(path: str | Path) -> TeacherLM:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    teacher = TeacherLM(TeacherConfig(**payload["config"]))
    teacher.load_state_dict(payload["state_dict"])
    teacher.eval()
    return teacher


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class EvalReport:
    task: str
    accuracy: float
    fluency: float
    sample_count: int
    config_hash: str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AblationBudget:
    """Desk-scale knobs for one ablation sweep; every cell shares them."""

    train_steps: int = 200
    classifier_steps: int = 200
    teacher_steps: int = 200
    targets: int = 5
    samples_per_target: int = 3
    content_field: str = "food"
    use_mbr: bool = True
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    T: int = 64
    buckets: int = 3
    batch_size: int = 16
    lr: float = 3e-4
    warmup: int = 20
    max_len: int = 64
    guidance_updates: int = 2
    guidance_eta: float = 0.1
    guidance_lam: float = 0.01


@dataclass
class AblationCell:
    strategy: NoiseStrategy
    objective: str
    report: EvalReport | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.report is None

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "objective": self.objective,
            "report": self.report.to_dict() if self.report else None,
            "error": self.error,
        }


def _sample_content_targets(
    valid_corpus: Corpus, field: str, n: int, generator: torch.Generator
) -> list[str]:
    values = [
        attrs[field]
        for attrs in valid_corpus.attributes
        if attrs is not None and field in attrs
    ]
    if not values:
        raise ValueError(f"validation corpus has no attribute {field!r}")
    picks = torch.randint(len(values), (n,), generator=generator)
    return [values[int(i)] for i in picks]


def run_ablation(
    train_corpus: Corpus,
    valid_corpus: Corpus,
    strategies: list[NoiseStrategy],
    objectives: list[str],
    budget: AblationBudget,
    seed: int = 0,
    tagger: PosTagger | None = None,
) -> list[AblationCell]:
    """Train and score one model per (strategy, objective) cell.

    Every cell runs with the same seed and budget so cells are directly
    comparable; a diverged cell is marked failed and the sweep continues.
    Cells are emitted strategy-major in the order given (callers use the
    published table orders by default).
    """
    if tagger is None:
        tagger = PosTagger()
    teacher = train_teacher(
        valid_corpus,
        TeacherConfig(vocab_size=valid_corpus.vocab.size, max_len=budget.max_len),
        steps=budget.teacher_steps,
        seed=seed,
    )
    target_gen = torch.Generator().manual_seed(seed)
    targets = _sample_content_targets(
        valid_corpus, budget.content_field, budget.targets, target_gen
    )

    model_config = ModelConfig(
        vocab_size=train_corpus.vocab.size,
        hidden=budget.hidden,
        layers=budget.layers,
        heads=budget.heads,
        T=budget.T,
        max_len=budget.max_len,
    )
    train_config = TrainConfig(
        steps=budget.train_steps,
        lr=budget.lr,
        batch_size=budget.batch_size,
        warmup=min(budget.warmup, budget.train_steps),
        seed=seed,
        buckets=budget.buckets,
        checkpoint_every=budget.train_steps + 1,
    )
    guidance_config = GuidanceConfig(
        lam=budget.guidance_lam,
        updates=budget.guidance_updates,
        eta=budget.guidance_eta,
        candidates=budget.samples_per_target,
    )

    cells = []
    for strategy in strategies:
        for objective in objectives:
            cell_cfg = {
                "strategy": strategy.value,
                "objective": objective,
                "seed": seed,
                "budget": asdict(budget),
            }
            cell = AblationCell(strategy=strategy, objective=objective)
            try:
                schedule = make_schedule(budget.T)
                result = train(
                    train_corpus, train_config, objective, strategy,
                    model_config=model_config, schedule=schedule, tagger=tagger,
                )
                classifier, _ = train_latent_classifier(
                    train_corpus, result.model, schedule, ControlKind.CONTENT,
                    field=budget.content_field, tagger=tagger,
                    strategy=strategy, buckets=budget.buckets,
                    steps=budget.classifier_steps, seed=seed,
                )
                draw_length = length_sampler_from_histogram(result.length_histogram)
                sample_gen = torch.Generator().manual_seed(seed)
                outputs = []
                specs = []
                for value in targets:
                    spec = ControlSpec(
                        kind=ControlKind.CONTENT, field=budget.content_field, value=value
                    )
                    outs = generate_outputs(
                        result.model, schedule, train_corpus.vocab, 1,
                        guidance_config, sample_gen, control=spec,
                        classifier=classifier, length_sampler=draw_length,
                        use_mbr=budget.use_mbr, rounding=objective == OBJECTIVE_L2,
                        buckets=budget.buckets,
                    )
                    outputs.extend(outs)
                    specs.append(spec)
                token_lists = [
                    [train_corpus.vocab.token_for(i) for i in out.ids] for out in outputs
                ]
                accuracy = content_accuracy(token_lists, specs)
                fluency = fluency_perplexity(outputs, teacher, bos_id=valid_corpus.vocab.pad_id)
                cell.report = EvalReport(
                    task="content",
                    accuracy=accuracy,
                    fluency=fluency,
                    sample_count=len(outputs),
                    config_hash=config_hash(cell_cfg),
                )
            except (RuntimeError, ValueError) as err:
                cell.error = str(err)
            cells.append(cell)
    return cells


def format_ablation_table(cells: list[AblationCell]) -> str:
    """Aligned text table, rows in the sweep's (strategy, objective) order."""
    header = f"{'noise strategy':<22}{'objective':<11}{'accuracy':>9}{'fluency':>9}"
    lines = [header, "-" * len(header)]
    for cell in cells:
        if cell.failed:
            lines.append(
                f"{cell.strategy.value:<22}{cell.objective:<11}{'failed':>9}{'-':>9}"
            )
        else:
            lines.append(
                f"{cell.strategy.value:<22}{cell.objective:<11}"
                f"{cell.report.accuracy:>9.3f}{cell.report.fluency:>9.2f}"
            )
    return "\n".join(lines)
