import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memvos.config import PipelineConfig, config_to_text, parse_config, read_config, write_config
from memvos.types import DataError


def test_empty_text_gives_defaults():
    assert parse_config("") == PipelineConfig()


def test_comments_and_blank_lines_ignored():
    text = "# header comment\n\nmemory_interval = 7  # inline\n"
    assert parse_config(text).memory_interval == 7


def test_scales_list():
    cfg = parse_config("scales = 0.75,1.0,1.25")
    assert cfg.scales == (0.75, 1.0, 1.25)


def test_tau_out_of_range_message():
    with pytest.raises(DataError, match=r"temporal_tau must be in \(0,1\]"):
        parse_config("temporal_tau = 1.5")


def test_unknown_key_rejected():
    with pytest.raises(DataError, match="unknown key 'window_radius'"):
        parse_config("window_radius = 4")


def test_duplicate_key_rejected():
    with pytest.raises(DataError, match="duplicate"):
        parse_config("seed = 1\nseed = 2\n")


def test_bad_bool_rejected():
    with pytest.raises(DataError, match="cannot parse"):
        parse_config("flip = yes")


def test_bad_int_rejected():
    with pytest.raises(DataError, match="cannot parse"):
        parse_config("memory_interval = five")


def test_missing_equals_rejected():
    with pytest.raises(DataError, match="expected 'key = value'"):
        parse_config("just some words")


def test_negative_alpha_rejected():
    with pytest.raises(DataError, match=r"small_object_alpha must be in \[0,1\)"):
        PipelineConfig(small_object_alpha=-0.1)


def test_default_roundtrip():
    cfg = PipelineConfig()
    assert parse_config(config_to_text(cfg)) == cfg


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=80, deadline=None)
@given(
    interval=st.integers(1, 1000),
    tau=st.floats(1e-9, 1.0),
    bias=finite,
    w_stm=finite,
    scales=st.lists(st.floats(0.25, 4.0), min_size=1, max_size=8),
    flip=st.booleans(),
    scheme=st.sampled_from(["a", "b"]),
    ew=st.lists(finite, min_size=0, max_size=5),
    seed=st.integers(0, 2**63 - 1),
)
def test_roundtrip_random_configs(interval, tau, bias, w_stm, scales, flip, scheme, ew, seed):
    cfg = PipelineConfig(
        memory_interval=interval,
        temporal_tau=tau,
        decoder_bias=bias,
        w_stm=w_stm,
        scales=tuple(scales),
        flip=flip,
        scheme=scheme,
        ensemble_weights=tuple(ew),
        seed=seed,
    )
    assert parse_config(config_to_text(cfg)) == cfg


def test_file_roundtrip(tmp_path):
    cfg = PipelineConfig(memory_interval=3, use_oc=False, scales=(0.5, 1.0))
    path = tmp_path / "pipeline.cfg"
    write_config(path, cfg)
    assert read_config(path) == cfg


def test_read_config_missing_file(tmp_path):
    with pytest.raises(DataError):
        read_config(tmp_path / "nope.cfg")
