import pytest
import torch

from sdlm import toydata
from sdlm.corpus import build_vocabulary, corpus_from_sequences, tokenize
from sdlm.denoiser import Denoiser, ModelConfig
from sdlm.schedule import make_schedule

# Three-sentence corpus used by the hand-computed importance oracles.
TOY3_TEXTS = ["the cat sat", "the dog sat", "a cat ran"]


@pytest.fixture(scope="session")
def toy3_corpus():
    vocab = build_vocabulary(TOY3_TEXTS)
    seqs = [tokenize(t, vocab) for t in TOY3_TEXTS]
    return corpus_from_sequences(seqs, vocab)


@pytest.fixture(scope="session")
def toy_rows():
    return toydata.generate(50, seed=7)


@pytest.fixture(scope="session")
def toy_corpus(toy_rows):
    vocab = build_vocabulary([r["text"] for r in toy_rows])
    seqs = [tokenize(r["text"], vocab) for r in toy_rows]
    return corpus_from_sequences(
        seqs, vocab, attributes=[r["attributes"] for r in toy_rows]
    )


@pytest.fixture()
def micro_setup(toy_corpus):
    """Tiny float64 model + schedule for gradient checks."""
    torch.manual_seed(0)
    config = ModelConfig(
        vocab_size=toy_corpus.vocab.size, hidden=16, layers=2, heads=2,
        ffn_mult=2, dropout=0.0, max_len=16, T=8,
    )
    model = Denoiser(config).double()
    model.eval()
    schedule = make_schedule(8)
    return model, schedule, toy_corpus
