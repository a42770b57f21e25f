import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hgmatch.config import SynthConfig, TrainConfig, VARIANTS
from hgmatch.pipeline import build_model, load_dataset
from hgmatch.synthgen import generate


TINY_SYNTH = dict(
    ads=40, keywords=80, items=20, categories=2, clusters=4,
    density_ad_click_kw=0.05, density_ad_bid_kw=0.05,
    density_item_click_kw=0.08, density_ad_coclick_item=0.08,
    labels_per_view=60, term_vocab=50, seed=7,
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_synth")
    paths, stats = generate(SynthConfig(**TINY_SYNTH), out)
    ds = load_dataset(
        paths["edges"], paths["nodes"], paths["features"],
        labels=paths["labels"], task=paths["task"],
    )
    ds.paths = paths
    ds.stats = stats
    return ds


@pytest.fixture(scope="session")
def tiny_model(tiny_dataset):
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11)
    return build_model(tiny_dataset, cfg, VARIANTS["full"])
