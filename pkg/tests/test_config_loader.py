import numpy as np
import pytest

import config_loader as cl
from errors import ConfigError, IoError, NotElliptic


def test_statements_split_on_semicolons_outside_quotes():
    sections = cl.parse_config_text('command = "classify"; family = "a;b.cfg"\nseed = 4')
    assert sections == {"run": {"command": "classify", "family": "a;b.cfg", "seed": 4}}


def test_sections_and_value_types():
    text = """
    # comment
    [family]
    m = 1
    R = 0.5

    [lambda2]
    expr = x1^2
    at0 = 0
    """
    sections = cl.parse_config_text(text.replace("\n    ", "\n"))
    assert sections["family"] == {"m": 1, "R": 0.5}
    assert sections["lambda2"] == {"expr": "x1^2", "at0": 0}


def test_json_documents():
    sections = cl.parse_config_text('{"command": "sharpness", "profile": {"expr": "1"}}', ".json")
    assert sections == {"run": {"command": "sharpness"}, "profile": {"expr": "1"}}
    with pytest.raises(ConfigError):
        cl.parse_config_text("[1, 2]", ".json")
    with pytest.raises(ConfigError):
        cl.parse_config_text("{", ".json")


def test_duplicate_keys_are_rejected():
    with pytest.raises(ConfigError):
        cl.parse_config_text("a = 1\na = 2")


def test_file_guards(write, tmp_path):
    with pytest.raises(ConfigError):
        cl.read_config_file(write("run.yaml", "a = 1"))
    with pytest.raises(IoError):
        cl.read_config_file(str(tmp_path / "missing.cfg"))
    path = tmp_path / "latin.cfg"
    path.write_bytes(b"expr = \xe9")
    with pytest.raises(ConfigError):
        cl.read_config_file(str(path))


def test_load_profile(write):
    prof = cl.load_profile(write("flat.cfg", """
        [profile]
        expr = "exp(-1/abs(x1))"
        at0 = 0
        """))
    assert prof.name == "flat"
    assert prof([0.0]) == 0.0
    with pytest.raises(ConfigError) as info:
        cl.load_profile(write("bad.cfg", "expr = 1\nshape = round\n"))
    assert info.value.key == "shape"


def test_elliptical_declaration_is_checked_on_load(write):
    prof = cl.load_profile(write("one.cfg", "expr = \"1 + x1^2\"\nelliptical = true\n"))
    assert prof.elliptical
    with pytest.raises(NotElliptic) as info:
        cl.load_profile(write("gap.cfg", "expr = \"pos(abs(x1) - 0.5)\"\nelliptical = true\n"))
    assert abs(info.value.point[0]) < 0.5
    assert info.value.exit_code == 1


def test_load_family(write):
    fam = cl.load_family(write("ks.cfg", """
        [family]
        m = 1
        p = 3
        n = 3

        [lambda2]
        expr = 1
        at0 = 1

        [lambda3]
        expr = "exp(-2/abs(x1))"
        at0 = 0
        """))
    assert (fam.m, fam.p, fam.n) == (1, 3, 3)
    assert [p.name for p in fam.profiles] == ["lambda2", "lambda3"]
    with pytest.raises(ConfigError) as info:
        cl.load_family(write("short.cfg", "[family]\nm = 1\np = 3\n[lambda2]\nexpr = 1\n"))
    assert info.value.key == "lambda3"


def test_load_matrix_and_decomposition(write):
    A = cl.load_matrix(write("A.cfg", """
        [matrix]
        n = 2
        a[1][1] = "1"
        a[2][2] = "x1^4"
        """))
    assert A.evaluate(np.array([[0.5, 0.0]]))[0] == pytest.approx(np.diag([1.0, 0.0625]))
    cand = cl.load_sos(write("X.cfg", """
        [sos]
        X[1][1] = ["1", "0"]
        X[2][1] = ["0", "x1^2"]
        """), 2)
    assert cand.p == 3
    with pytest.raises(ConfigError):
        cl.load_matrix(write("B.cfg", "[matrix]\nn = 2\nb[1][1] = 1\n"))
    with pytest.raises(ConfigError):
        cl.load_sos(write("Y.cfg", '[sos]\nX[2][1] = ["1", "0"]\n'), 2)
    with pytest.raises(ConfigError):
        cl.load_sos(write("Z.cfg", "[sos]\nX[1][1] = 1\n"), 2)


def test_decomposition_with_a_lower_block(write):
    cand = cl.load_sos(write("XQ.cfg", """
        [sos]
        X[1][1] = ["1", "0", "0"]
        Q[1][1] = "x1^2"
        Q[2][2] = "2 * x1^2"
        """), 3)
    assert cand.Q.size == 2
    assert cand.Q.dim == 3


@pytest.mark.parametrize(
    "text, expected",
    [
        ("10:1e4:4log", [10.0, 100.0, 1000.0, 10000.0]),
        ("10:1e4:4", [10.0, 100.0, 1000.0, 10000.0]),
        ("1:3:3lin", [1.0, 2.0, 3.0]),
        ("5:5:1", [5.0]),
    ],
)
def test_parse_sweep(text, expected):
    assert cl.parse_sweep(text).tolist() == pytest.approx(expected)


@pytest.mark.parametrize("text", ["10:1e4", "a:b:3", "0:10:3", "10:1:3", "10:100:0"])
def test_parse_sweep_rejects(text):
    with pytest.raises(ConfigError):
        cl.parse_sweep(text)


def test_parse_params():
    assert cl.parse_params("eps=0.3, delta=0.05,form=max-min") == {"eps": 0.3, "delta": 0.05, "form": "max-min"}
    with pytest.raises(ConfigError):
        cl.parse_params("eps")
