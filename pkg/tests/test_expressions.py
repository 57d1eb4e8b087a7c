from decimal import Decimal

import pytest

from relmig.errors import RuleParameterError, TransformError
from relmig.expressions import compile_expression, quantize_result


def evaluate(text, **values):
    return compile_expression(text).evaluate(values)


def test_net_plus_tax_is_exact():
    result = evaluate("net * (1 + tax)", net=Decimal("100.00"), tax=Decimal("0.18"))
    assert quantize_result(result, "decimal") == Decimal("118.00")


def test_exactness_where_binary_floats_fail():
    result = evaluate("a + b", a=Decimal("0.10"), b=Decimal("0.20"))
    assert result == Decimal("0.30")


def test_precedence_and_negation():
    assert evaluate("2 + 3 * 4") == Decimal(14)
    assert evaluate("(2 + 3) * 4") == Decimal(20)
    assert evaluate("-x + 1", x=3) == Decimal(-2)


def test_null_operand_yields_null():
    assert evaluate("a + 1", a=None) is None
    assert evaluate("a * b", a=Decimal("2"), b=None) is None
    assert quantize_result(None, "decimal") is None


def test_division_by_zero_is_a_row_error():
    with pytest.raises(TransformError, match="DivisionByZero"):
        evaluate("a / b", a=Decimal("1"), b=Decimal("0"))


def test_non_numeric_operand_is_a_row_error():
    with pytest.raises(TransformError, match="NonNumericOperand"):
        evaluate("a + 1", a="ten")


def test_quantization_is_half_even():
    assert quantize_result(Decimal("2.125"), "decimal") == Decimal("2.12")
    assert quantize_result(Decimal("2.135"), "decimal") == Decimal("2.14")
    assert quantize_result(Decimal("2.5"), "integer") == 2
    assert quantize_result(Decimal("3.5"), "integer") == 4


def test_referenced_columns_are_reported():
    assert compile_expression("a * (b - c) / 2").columns == frozenset({"a", "b", "c"})


@pytest.mark.parametrize("bad", ["", "1 +", "a ** b", "(a", "a b", "1 $ 2"])
def test_bad_expressions_rejected(bad):
    with pytest.raises(RuleParameterError):
        compile_expression(bad)
