import random
from pathlib import Path

import pytest

from metis.judge import (
    FALLBACK_PREDICTION,
    PREDICTION_GRID,
    REASON_NO_BOX,
    REASON_NON_NUMERIC,
    REASON_OUT_OF_RANGE,
    CalibrationMemory,
    MemoryEntry,
    extract_boxed,
    parse_judgment,
    render_judgment_messages,
    render_judgment_prompt,
)

DATA = Path(__file__).parent / "data"


def fixture(name):
    return (DATA / name).read_text()


class TestParseGolden:
    def test_worked_response_one(self):
        r = parse_judgment(fixture("a3_example1.txt"))
        assert r.ok and r.value == pytest.approx(0.12)

    def test_worked_response_two(self):
        r = parse_judgment(fixture("a3_example2.txt"))
        assert r.ok and r.value == pytest.approx(0.25)

    def test_runaway_response_rejected_with_fallback(self):
        r = parse_judgment(fixture("a6_response.txt"))
        assert not r.ok
        assert r.reason == REASON_OUT_OF_RANGE
        assert r.prediction == FALLBACK_PREDICTION == 0.0


class TestParseBehavior:
    def test_no_box(self):
        r = parse_judgment("the variance is 0.12, definitely")
        assert not r.ok and r.reason == REASON_NO_BOX

    def test_non_numeric(self):
        r = parse_judgment(r"\boxed{\text{high}}")
        assert not r.ok and r.reason == REASON_NON_NUMERIC

    def test_last_box_wins(self):
        assert parse_judgment(r"\boxed{0.02} then \boxed{0.15}").value == pytest.approx(0.15)

    def test_last_numeric_box_out_of_range_rejects(self):
        r = parse_judgment(r"\boxed{0.10} ... \boxed{3}")
        assert not r.ok and r.reason == REASON_OUT_OF_RANGE

    def test_non_numeric_boxes_are_skipped(self):
        assert parse_judgment(r"\boxed{0.10} and \boxed{xyz}").value == pytest.approx(0.10)

    def test_balanced_braces_survive_nesting(self):
        assert extract_boxed(r"\boxed{\frac{1}{4}}") == [r"\frac{1}{4}"]
        assert parse_judgment(r"\boxed{{0.12}}").ok is False  # nested braces, non-numeric

    def test_whitespace_before_brace(self):
        assert parse_judgment("\\boxed {0.08}").value == pytest.approx(0.08)

    def test_unclosed_box_ignored(self):
        r = parse_judgment(r"\boxed{0.5")
        assert not r.ok and r.reason == REASON_NO_BOX

    def test_off_grid_in_range_value_accepted(self):
        r = parse_judgment(r"\boxed{0.11}")
        assert r.ok and r.value == pytest.approx(0.11)

    def test_boundaries(self):
        assert parse_judgment(r"\boxed{0}").ok
        assert parse_judgment(r"\boxed{0.25}").ok
        assert parse_judgment(r"\boxed{0.250001}").reason == REASON_OUT_OF_RANGE
        assert parse_judgment(r"\boxed{-0.01}").reason == REASON_OUT_OF_RANGE

    def test_fuzz_wrappers_never_misparse(self):
        # Any prose around exactly one well-formed in-range box must still
        # recover that box's value.
        rng = random.Random(1234)
        alphabet = "abcdefghijklmnopqrstuvwxyz {}()[]$^_.,:;0123456789\n"
        for _ in range(1_000):
            value = rng.choice(PREDICTION_GRID[1:])  # nonzero so fallback differs
            prefix = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 120)))
            suffix = "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 120)))
            text = f"{prefix}\\boxed{{{value}}}{suffix}"
            r = parse_judgment(text)
            assert r.ok, text
            assert r.value == pytest.approx(value)


class TestRenderer:
    def exemplars(self):
        return CalibrationMemory(
            3,
            (
                MemoryEntry(prompt_id=1, variance=0.000, iteration=1, text="alpha problem"),
                MemoryEntry(prompt_id=2, variance=0.109, iteration=1, text="beta problem"),
                MemoryEntry(prompt_id=3, variance=0.250, iteration=1, text="gamma problem"),
            ),
        )

    def test_golden_k3(self):
        mem = CalibrationMemory(
            3,
            (
                MemoryEntry(prompt_id=1, variance=0.000, iteration=1, text=_EX1),
                MemoryEntry(prompt_id=2, variance=0.109, iteration=1, text=_EX2),
                MemoryEntry(prompt_id=3, variance=0.250, iteration=1, text=_EX3),
            ),
        )
        assert render_judgment_prompt(mem, _CAND) == fixture("golden_prompt_k3.txt")

    def test_golden_k0(self):
        assert render_judgment_prompt(CalibrationMemory(0), _CAND) == fixture("golden_prompt_k0.txt")

    def test_variance_renders_three_decimals(self):
        _, user = render_judgment_messages(self.exemplars(), "candidate text")
        assert "REWARD_VARIANCE: 0.109" in user
        assert "REWARD_VARIANCE: 0.000" in user
        assert "REWARD_VARIANCE: 0.250" in user

    def test_k0_has_no_example_blocks(self):
        system, user = render_judgment_messages(CalibrationMemory(0), "candidate")
        assert "[Example" not in user
        assert "Calibration:" not in system
        assert "[Candidate]" in user

    def test_exemplar_order_is_memory_order(self):
        _, user = render_judgment_messages(self.exemplars(), "candidate")
        assert user.index("alpha problem") < user.index("beta problem") < user.index("gamma problem")
        assert user.index("[Example 1]") < user.index("[Example 3]") < user.index("[Candidate]")

    def test_grid_list_rendered_in_system_message(self):
        system, _ = render_judgment_messages(CalibrationMemory(0), "x")
        assert "[0.00, 0.02, 0.04, 0.06, 0.08, 0.10, 0.12, 0.15, 0.18, 0.20, 0.25]" in system
        assert "choosing one number from this list" in system

    def test_deterministic(self):
        mem = self.exemplars()
        assert render_judgment_prompt(mem, "zzz") == render_judgment_prompt(mem, "zzz")

    def test_round_trip_each_grid_value(self):
        for v in PREDICTION_GRID:
            r = parse_judgment(f"\\boxed{{{v}}}")
            assert r.ok and r.value == pytest.approx(v)


_EX1 = """For a given positive integer $k$, denote the square of the sum of its digits by
$f_1(k)$. Define the function recursively as $f_{n+1}(k) = f_1(f_n(k))$.
Determine the value of $f_{1991}(2^{1990})$."""

_EX2 = """For how many integers $k$ does the following system of equations have a
solution other than $a=b=c=0$ in the set of real numbers?
\\[
\\begin{cases}
  a^2 + b^2 = kc(a+b), \\\\
  b^2 + c^2 = ka(b+c), \\\\
  c^2 + a^2 = kb(c+a).
\\end{cases}
\\]"""

_EX3 = """There are $10$ horses, named Horse $1$, Horse $2$, ..., Horse $10$. They get
their names from how many minutes it takes them to run one lap around a
circular race track: Horse $k$ runs one lap in exactly $k$ minutes. At time $0$
all the horses are together at the starting point on the track. The horses
start running in the same direction, and they keep running around the circular
track at their constant speeds. The least time $S > 0$, in minutes, at which
all $10$ horses will again simultaneously be at the starting point is $S=2520$.
Let $T > 0$ be the least time, in minutes, such that at least $5$ of the horses
are again at the starting point. What is the sum of the digits of $T?$"""

_CAND = """Let $f(x) = x^2-2x$. How many distinct real numbers $c$ satisfy
$f(f(f(f(c)))) = 3$?"""
