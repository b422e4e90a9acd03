import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # helpers / corpus modules

from corpus import build_corpus  # noqa: E402

from slideqa.model import ModelConfig  # noqa: E402
from slideqa.training import TrainConfig, train  # noqa: E402

# Training config pinned for the bundled overfit experiment. lr is raised
# from the 1e-4 default: at desk scale 1e-4 plateaus around loss 0.23
# within the 3000-step budget, while 3e-4 converges an order of magnitude
# below the 0.05 bar.
OVERFIT_TRAIN = dict(lr=3e-4, max_steps=3000, seed=0,
                     resample_templates=False, eval_every=10**9)


@pytest.fixture(scope="session")
def corpus():
    return build_corpus()


@pytest.fixture(scope="session")
def desk_cfg(corpus):
    return ModelConfig(vocab_size=corpus["vocab"].size, enc_layers=2, dec_layers=2,
                       hidden=64, heads=4, word_dim=64, max_text=32, max_bag=64)


@pytest.fixture(scope="session")
def overfit(corpus, desk_cfg):
    """The 3000-step training run shared by generation + acceptance tests."""
    import time

    t0 = time.time()
    result = train(corpus["samples"], corpus["bags"], corpus["vocab"],
                   TrainConfig(**OVERFIT_TRAIN), desk_cfg)
    return {"result": result, "seconds": time.time() - t0}
