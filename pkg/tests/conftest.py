import numpy as np
import pytest

from multiview_re.data import RelationInstance, build_char_vocab, build_label_vocab, make_batch
from multiview_re.lexicon import Lexicon
from multiview_re.model import ModelConfig, MultiViewModel
from multiview_re.radical import RadicalDictionary
from multiview_re.synth import synth_generate

SMALL = dict(view_dim=6, d_char=5, d_pos=3, hidden=4, d_radical=4, d_conv=5, d_word=4, max_pos=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    return synth_generate(40, 3, seed=11)


@pytest.fixture(scope="session")
def toy_instances():
    return [
        RelationInstance(tuple("南京市长江大桥"), (0, 2), (3, 5), "located_in"),
        RelationInstance(tuple("江大桥"), (0, 1), (1, 3), "part_of"),
        RelationInstance(tuple("脚疼了"), (0, 1), (1, 2), "located_in"),
    ]


@pytest.fixture(scope="session")
def toy_lexicon():
    return Lexicon(["南京", "市长", "南京市", "长江", "大桥", "桥"])


@pytest.fixture(scope="session")
def toy_radicals():
    return RadicalDictionary({
        "脚": ("月", "土", "厶", "卩"),
        "疼": ("疒", "夂", "丶", "丶"),
        "江": ("氵", "工"),
        "桥": ("木", "乔"),
    })


def small_model(instances, lexicon, radicals, fusion="move", views=("semantic", "lexicon", "radical"), seed=0, **kw):
    cfg = ModelConfig(views=tuple(views), fusion=fusion, **{**SMALL, **kw})
    return MultiViewModel.for_corpus(cfg, instances, lexicon, radicals, seed=seed)


def batch_of(model, instances):
    return make_batch(instances, model.char_vocab, model.label_vocab, max_pos=model.config.max_pos)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
