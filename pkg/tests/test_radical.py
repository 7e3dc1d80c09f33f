import numpy as np
import pytest

from multiview_re import tensor as T
from multiview_re.errors import DataValidationError
from multiview_re.nn import ParamStore
from multiview_re.radical import RadicalDictionary, RadicalEncoder, encode_radical, load_dictionary, parse_line


def test_parse_space_and_tab_layouts():
    assert parse_line("脚\t月 土 厶 卩") == ("脚", ("月", "土", "厶", "卩"))
    assert parse_line("疼\t疒 夂 丶 丶") == ("疼", ("疒", "夂", "丶", "丶"))
    assert parse_line("江\t氵\t工") == ("江", ("氵", "工"))
    # several space-separated decompositions: the first is kept
    assert parse_line("好\t女 子\t女 了 一") == ("好", ("女", "子"))


def test_load_dictionary(tmp_path):
    p = tmp_path / "r.tsv"
    p.write_text("# comment\n脚\t月 土 厶 卩\n\n疼\t疒 夂 丶 丶\n脚\t⺼ 却\n", encoding="utf-8")
    rd = load_dictionary(p)
    assert rd.decompose("脚") == ("月", "土", "厶", "卩")
    assert rd.decompose("疼") == ("疒", "夂", "丶", "丶")
    assert rd.decompose("A") == ("A",)
    assert len(rd) == 2


def test_empty_component_list_reports_line(tmp_path):
    p = tmp_path / "r.tsv"
    p.write_text("脚\t月 土\n疼\t \n", encoding="utf-8")
    with pytest.raises(DataValidationError, match=":2"):
        load_dictionary(p)


def test_tsv_round_trip(tmp_path, toy_radicals):
    toy_radicals.write_tsv(tmp_path / "r.tsv")
    again = load_dictionary(tmp_path / "r.tsv")
    assert again.entries == toy_radicals.entries


def test_fallback_ids_are_shared_vocabulary(toy_radicals):
    import copy

    rd = copy.deepcopy(toy_radicals)
    rd.extend_fallbacks(["A", "脚"])
    assert rd.component_ids("A") == [rd.components.id("A")]
    assert rd.components.id("A") > 1


def _encoder(rd, seed=0):
    return RadicalEncoder(ParamStore(seed), rd, d_radical=4, d_conv=5, window=3, out_dim=6)


def test_zero_filters_give_projection_bias(toy_radicals):
    enc = _encoder(toy_radicals)
    enc.conv.weight.data[:] = 0.0
    enc.conv.bias.data[:] = 0.0
    out = encode_radical(["A"], enc).data
    np.testing.assert_array_equal(out[0], enc.proj.bias.data)


def test_output_shape_independent_of_component_lengths(toy_radicals):
    enc = _encoder(toy_radicals)
    for chars in (["脚"], ["A", "江", "疼", "桥"]):
        assert encode_radical(chars, enc).shape == (len(chars), 6)


def test_characters_encoded_independently(toy_radicals):
    enc = _encoder(toy_radicals)
    a = encode_radical(["脚", "江", "疼"], enc).data
    b = encode_radical(["疼", "江", "脚"], enc).data
    np.testing.assert_array_equal(a[::-1], b)
    c = encode_radical(["脚", "桥", "疼"], enc).data
    assert a[0].tobytes() == c[0].tobytes() and a[2].tobytes() == c[2].tobytes()


def test_window_padding_for_short_sequences(toy_radicals):
    enc = _encoder(toy_radicals)
    windows, mask = enc.component_matrix([["A", "脚"]], 2)
    assert windows.shape == (2, enc.max_len - 2, 3)
    # single-component char: one valid window; four components: two windows
    assert mask[0].sum() == 1 and mask[1].sum() == 2


def test_gradient_wrt_component_embeddings(toy_radicals):
    enc = _encoder(toy_radicals, seed=3)
    chars = [["脚", "江", "A"]]
    f = lambda: T.tanh(enc(chars)).sum()
    assert T.grad_check(f, [enc.embedding, enc.conv.weight, enc.proj.weight]) <= 1e-4
