import pytest

from scet.config import ALIASES, SCHEMA, ConfigError, canonical, load_config, parse_config, render_config


def test_basic_parse_with_comments_and_aliases():
    text = """
    # desk run
    preset = desk-tiny
    d = 4          # blocks
    w=32
    lr = 2e-3
    transformer = false
    data = /tmp/some dir/hr
    """
    assert parse_config(text) == {"preset": "desk-tiny", "num_blocks": 4, "channels": 32, "lr0": 2e-3,
                                  "use_transformer": False, "data": "/tmp/some dir/hr"}


def test_later_lines_win():
    assert parse_config("seed = 1\nseed = 2\n") == {"seed": 2}


@pytest.mark.parametrize("line", ["lr==x", "lr", "= 3", "lr = ", "two words = 1", "a = b = c"])
def test_malformed_line_names_line(line):
    with pytest.raises(ConfigError, match=r"cfg:2: malformed line"):
        parse_config("seed = 1\n" + line + "\n", "cfg")


def test_unknown_key():
    with pytest.raises(ConfigError, match=r":1: unknown key 'colour'"):
        parse_config("colour = red")


@pytest.mark.parametrize("line", ["d = four", "lr = fast", "augment = maybe"])
def test_bad_values(line):
    with pytest.raises(ConfigError, match="bad value"):
        parse_config(line)


def test_booleans():
    for text, value in (("yes", True), ("On", True), ("1", True), ("off", False), ("FALSE", False)):
        assert parse_config(f"augment = {text}")["augment"] is value


def test_aliases_resolve_into_schema():
    assert all(target in SCHEMA for target in ALIASES.values())
    assert canonical("iters") == "total_iters" and canonical("seed") == "seed"


def test_render_round_trip():
    values = {"num_blocks": 4, "lr0": 0.002, "augment": False, "data": "x/y", "lr_dir": None}
    text = render_config(values)
    assert "lr_dir" not in text
    assert parse_config(text) == {k: v for k, v in values.items() if v is not None}


def test_render_is_sorted():
    assert render_config({"seed": 1, "channels": 8}).splitlines() == ["channels = 8", "seed = 1"]


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.cfg")


def test_load_uses_path_in_messages(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("d = 2\nlr==x\n")
    with pytest.raises(ConfigError, match=r"run.cfg:2"):
        load_config(p)


def test_load_non_utf8(tmp_path):
    p = tmp_path / "bin.cfg"
    p.write_bytes(b"\xff\xfe\x00")
    with pytest.raises(ConfigError, match="UTF-8"):
        load_config(p)
