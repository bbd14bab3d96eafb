import math

import numpy as np
import pytest

from diffkit.coeffs import (
    Bin,
    Call,
    ModelFamily,
    Neg,
    Num,
    Var,
    compile_fn,
    eval_expr,
    expand_family,
    parse_expr,
    to_source,
)
from diffkit.errors import (
    EvalDomainError,
    InvalidParameterError,
    ParseError,
    UnknownIdentifierError,
)


def test_parse_variable():
    assert parse_expr("x") == Var()


def test_parse_tree_shape():
    e = parse_expr("2*sqrt(x)")
    assert e == Bin("*", Num(2.0), Call("sqrt", (Var(),)))
    assert eval_expr(e, 4.0) == 4.0


def test_power():
    assert eval_expr(parse_expr("x^2"), 3.0) == 9.0


def test_power_right_assoc():
    # 2^(3^2) = 512, not (2^3)^2 = 64
    assert eval_expr(parse_expr("2^3^2"), 0.0) == 512.0


def test_unary_minus_binds_below_power():
    assert eval_expr(parse_expr("-x^2"), 3.0) == -9.0


def test_precedence():
    assert eval_expr(parse_expr("1+2*3"), 0.0) == 7.0
    assert eval_expr(parse_expr("(1+2)*3"), 0.0) == 9.0
    assert eval_expr(parse_expr("2^-1"), 0.0) == 0.5


def test_whitespace_insignificant():
    assert parse_expr(" 1 +  2*x ") == parse_expr("1+2*x")


def test_eval_abs_sign():
    assert eval_expr(parse_expr("abs(x)"), -2.0) == 2.0
    # paper convention: sgn(0) = +1
    assert eval_expr(parse_expr("sign(x)"), 0.0) == 1.0
    assert eval_expr(parse_expr("sign(x)"), -1e-300) == -1.0


def test_eval_domain_errors():
    with pytest.raises(EvalDomainError):
        eval_expr(parse_expr("log(x)"), -1.0)
    with pytest.raises(EvalDomainError):
        eval_expr(parse_expr("sqrt(x)"), -1.0)
    with pytest.raises(EvalDomainError):
        eval_expr(parse_expr("1/x"), 0.0)
    with pytest.raises(EvalDomainError):
        eval_expr(parse_expr("x^-1"), 0.0)
    with pytest.raises(EvalDomainError):
        eval_expr(parse_expr("exp(x)"), 1e10)


def test_min_max_pow_phi():
    assert eval_expr(parse_expr("min(x, 1)"), 3.0) == 1.0
    assert eval_expr(parse_expr("max(x, 1)"), 3.0) == 3.0
    assert eval_expr(parse_expr("pow(x, 3)"), 2.0) == 8.0
    assert abs(eval_expr(parse_expr("Phi(x)"), 0.0) - 0.5) < 1e-15
    assert abs(eval_expr(parse_expr("Phi(x)"), 1.0) - 0.8413447460685429) < 1e-12


def test_syntax_error_offset():
    with pytest.raises(ParseError) as ei:
        parse_expr("1 + * 2")
    assert ei.value.offset == 4


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as ei:
        parse_expr("2*y")
    assert ei.value.name == "y"


def test_empty_source():
    with pytest.raises(ParseError):
        parse_expr("   ")


ROUNDTRIP_CORPUS = [
    "x",
    "1",
    "2.5e-3",
    "-x",
    "--x",
    "x+1",
    "x-1-2",
    "x*2/3",
    "x^2",
    "x^2^3",
    "-x^2",
    "2^-3",
    "(x+1)*(x-1)",
    "x/(1+x)",
    "exp(x)",
    "log(x)",
    "sqrt(x)",
    "abs(x)",
    "sign(x)",
    "Phi(x)",
    "min(x, 1)",
    "max(0, x)",
    "pow(x, 0.5)",
    "exp(-x^2/2)",
    "1 - 1/x",
    "0.3*x",
    "2*sqrt(x)",
    "x^1.5",
    "min(max(x, 0), 1)",
    "sign(x)*sqrt(abs(x))",
    "Phi((x-1)/0.25)",
    "x*x + 2*x + 1",
    "1/(1+abs(x))",
    "exp(x)-exp(-x)",
    "x^-2",
    "-(x+1)",
    "-x*-x",
    "3 - -2",
    "x/2/3",
    "x-(1-2)",
    "(x^2)^3",
    "max(x - 1, 0)",
    "min(x, 1) + max(x, 2)",
    "sqrt(x^2+1)",
    "log(1+exp(x))",
    "abs(x - 0.5)",
    "2*Phi(x) - 1",
    "pow(2, x)",
    "x^0.5*sign(x-2)",
    "1e2*x",
    "0.05*x",
]


@pytest.mark.parametrize("src", ROUNDTRIP_CORPUS)
def test_roundtrip(src):
    e = parse_expr(src)
    assert parse_expr(to_source(e)) == e


def test_eval_pure_bit_identical():
    e = parse_expr("exp(-x^2/2)*Phi(x) + sqrt(abs(x))")
    vals = {eval_expr(e, 0.7321) for _ in range(20)}
    assert len(vals) == 1


def test_compile_fn_matches_eval():
    e = parse_expr("sign(x)*min(abs(x), 2) + Phi(x/3)")
    f = compile_fn(e)
    xs = np.linspace(-4, 4, 17)
    expected = np.array([eval_expr(e, float(x)) for x in xs])
    np.testing.assert_allclose(f(xs), expected, rtol=1e-14)


def test_families_expand():
    sb = expand_family(ModelFamily("squared-bessel", (3.0,)))
    assert sb.sigma_at(4.0) == 4.0  # 2*sqrt(4)
    assert sb.b_at(7.0) == 3.0
    assert (sb.l, sb.r) == (0.0, math.inf)

    gbm = expand_family(ModelFamily("gbm", (0.3,)))
    assert gbm.sigma_at(2.0) == pytest.approx(0.6)
    assert gbm.b_at(2.0) == 0.0

    ib = expand_family(ModelFamily("inverse-bessel3"))
    assert ib.sigma_at(3.0) == 9.0


def test_family_sigma_positive_interior():
    for name, args in [
        ("brownian", ()),
        ("brownian-drift", (0.5,)),
        ("gbm", (0.3,)),
        ("cev", (1.0, 2.0)),
        ("squared-bessel", (3.0,)),
        ("inverse-bessel3", ()),
    ]:
        spec = expand_family(ModelFamily(name, args))
        from diffkit.core import probe_points

        xs = probe_points(spec.l, spec.r, 10)
        assert np.all(np.asarray(spec.sigma(xs)) > 0), name


def test_family_bad_params():
    with pytest.raises(InvalidParameterError):
        expand_family(ModelFamily("gbm", (-1.0,)))
    with pytest.raises(InvalidParameterError):
        expand_family(ModelFamily("squared-bessel", (-2.0,)))
    with pytest.raises(InvalidParameterError):
        expand_family(ModelFamily("gbm", ()))
    with pytest.raises(InvalidParameterError):
        expand_family(ModelFamily("no-such-family", ()))
