import math

import pytest
from hypothesis import given, settings, strategies as st

from dpra import _pykernel
from dpra.expr import (EvalError, ExprSyntaxError, ExprTypeError, Scope, UnboundNameError,
                       check_expression, compile_expression, compile_python, eval_expression,
                       names_in, parse_expression, unparse)

try:
    from dpra import _ckernel
except ImportError:          # pragma: no cover - extension not built
    _ckernel = None


def ev(src, **env):
    return eval_expression(parse_expression(src), env)


def test_comparison_at_boundary():
    assert ev("level <= 0", level=0.0) is True


def test_arithmetic():
    assert ev("2*rate + 1", rate=3.0) == 7


def test_state_test():
    assert ev("pump == FAILED", pump="RUNNING") is False
    assert ev("pump != FAILED", pump="RUNNING") is True


def test_precedence_and_unary():
    assert ev("-2 * 3 + 4 / 2") == -4.0
    assert ev("not true or false") is False
    assert ev("1 < 2 and 3 >= 3") is True


def test_functions():
    assert ev("max(1, min(5, x))", x=3.0) == 3.0
    assert ev("if(x > 1, 10, 20)", x=2.0) == 10.0
    assert ev("sqrt(abs(-16))") == 4.0
    assert ev("exp(1000)") == math.inf


def test_division_by_zero_is_an_error():
    with pytest.raises(EvalError):
        ev("1 / x", x=0.0)


@pytest.mark.parametrize("src", ["log(0)", "sqrt(-1)"])
def test_domain_errors(src):
    with pytest.raises(EvalError):
        ev(src)


def test_unbound_name():
    with pytest.raises(UnboundNameError):
        ev("y + 1", x=1.0)


def test_type_errors():
    with pytest.raises(ExprTypeError):
        eval_expression(parse_expression("1 + 2"), {}, expect="bool")
    scope = Scope(frozenset({"x"}), {"pump": {"UP", "DOWN"}})
    with pytest.raises(ExprTypeError):
        check_expression(parse_expression("x and true"), scope)
    with pytest.raises(UnboundNameError):
        check_expression(parse_expression("pump == BROKEN"), scope)
    assert check_expression(parse_expression("pump == UP and x > 1"), scope) == "bool"


@pytest.mark.parametrize("src,col", [("1 +", 4), ("(a", 3), ("a $ b", 3)])
def test_syntax_errors_carry_column(src, col):
    with pytest.raises(ExprSyntaxError) as ei:
        parse_expression(src)
    assert ei.value.column == col


def test_names_in():
    assert names_in(parse_expression("a + max(b, c) > 2 and d == UP")) >= {"a", "b", "c", "d"}


def test_purity():
    node = parse_expression("x * 2 + y")
    env = {"x": 1.5, "y": 2.0}
    before = dict(env)
    assert eval_expression(node, env) == eval_expression(node, env)
    assert env == before


# ---------------------------------------------------------------------------
# the four evaluators agree

VARS = ["a", "b", "c"]


def exprs():
    leaf = st.one_of(
        st.sampled_from(VARS),
        st.floats(min_value=-50, max_value=50, allow_nan=False).map(lambda v: repr(round(v, 3))),
    )

    def grow(inner):
        return st.one_of(
            st.tuples(inner, st.sampled_from(["+", "-", "*", "/"]), inner).map(
                lambda t: f"({t[0]} {t[1]} {t[2]})"),
            st.tuples(st.sampled_from(["min", "max"]), inner, inner).map(
                lambda t: f"{t[0]}({t[1]}, {t[2]})"),
            st.tuples(inner, st.sampled_from(["<", "<=", ">"]), inner, inner, inner).map(
                lambda t: f"if({t[0]} {t[1]} {t[2]}, {t[3]}, {t[4]})"),
            inner.map(lambda e: f"abs({e})"),
            inner.map(lambda e: f"(-{e})"),
        )
    return st.recursive(leaf, grow, max_leaves=12)


def _compile_kernel(node):
    slots = {"t": 0, "a": 1, "b": 2, "c": 3}
    consts = []
    code = compile_expression(node, slots, {}, consts)
    ops = [op for op, _ in code]
    args = [consts[a] if op == 0 else float(a) for op, a in code]
    return ops, args


@settings(max_examples=300, deadline=None)
@given(exprs(), st.lists(st.floats(-20, 20, allow_nan=False), min_size=3, max_size=3))
def test_evaluators_agree(src, vals):
    node = parse_expression(src)
    env = dict(zip(VARS, vals))
    try:
        ref = float(eval_expression(node, env))
    except EvalError:
        ref = None
    slots = {"t": 0, "a": 1, "b": 2, "c": 3}
    flat = [0.0] + vals
    fn = compile_python(node, slots, {})
    try:
        py = float(fn(flat))
    except EvalError:
        py = None
    assert (ref is None) == (py is None)
    ops, args = _compile_kernel(node)
    backends = [_pykernel] + ([_ckernel] if _ckernel else [])
    for k in backends:
        v, status = k.run_program(ops, args, 0, len(ops), flat)
        if ref is None:
            assert status != _pykernel.OK
        else:
            assert status == _pykernel.OK
            assert v == ref or (math.isnan(v) and math.isnan(ref))
    if ref is not None:
        assert py == ref or (math.isnan(py) and math.isnan(ref))


@settings(max_examples=200, deadline=None)
@given(exprs())
def test_unparse_round_trip(src):
    node = parse_expression(src)
    assert parse_expression(unparse(node)) == node
