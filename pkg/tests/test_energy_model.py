"""Tests for energy accounting and planner comparison."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from ecoplan.const import HEADLINE_BIN, PhaseLabel
from ecoplan.energy_model import (
    BIN_LABELS,
    AccelHistogram,
    EnergyReport,
    PowerSample,
    acceleration_histogram,
    compare_reports,
    energy_audit,
    instantaneous_power,
    integrate_energy,
    proxy_power,
    regen_power,
    split_braking,
)
from ecoplan.errors import ComparisonError, DomainError
from ecoplan.models import LongitudinalState


def _report(**overrides):
    histogram = acceleration_histogram([-0.3, -0.7, 1.2])
    values = {
        "traction_energy_j": 1000.0,
        "regen_energy_j": 200.0,
        "brake_loss_j": 50.0,
        "proxy_energy_j": 30.0,
        "accel_histogram": histogram,
        "distance_m": 100.0,
        "duration_s": 10.0,
        "scenario_hash": "abc",
    }
    values.update(overrides)
    return EnergyReport(**values)


def test_instantaneous_and_proxy_power():
    assert instantaneous_power(500.0, 10.0) == 5000.0
    np.testing.assert_allclose(proxy_power([-2.0, 1.0], [5.0, 3.0]), [10.0, 3.0])
    with pytest.raises(DomainError):
        instantaneous_power(500.0, -1.0)


def test_power_sample_rejects_traction_with_regen():
    with pytest.raises(ValueError, match="both"):
        PowerSample(t=0.0, v=10.0, a=0.0, traction_power_w=10.0, regen_power_w=10.0)
    with pytest.raises(ValueError):
        PowerSample(t=0.0, v=10.0, a=0.0, brake_dissipation_w=-1.0)


@pytest.mark.parametrize(
    ("decel", "regen_n", "brake_n"),
    [(1.0, 1500.0, 0.0), (0.3, 0.0, 450.0), (4.0, 3000.0, 3000.0)],
)
def test_split_braking_at_20_ms(params, decel, regen_n, brake_n):
    split = split_braking(LongitudinalState(v_ms=20.0), decel, params)
    assert split.regen_force_n == pytest.approx(regen_n)
    assert split.brake_force_n == pytest.approx(brake_n)
    assert split.regen_w == pytest.approx(20.0 * regen_n)
    assert regen_power(LongitudinalState(v_ms=20.0), decel, params) == pytest.approx(
        (20.0 * regen_n, 20.0 * brake_n)
    )


def test_power_cap_can_disable_recovery(params):
    weak = replace(params, p_regen_max_w=10000.0)
    split = split_braking(LongitudinalState(v_ms=30.0), 1.0, weak)
    assert split.regen_force_n == 0.0
    assert split.brake_force_n == pytest.approx(1500.0)


def test_split_braking_rejects_negative_demand(params):
    with pytest.raises(DomainError):
        split_braking(LongitudinalState(v_ms=10.0), -0.5, params)


def test_histogram_fractions():
    hist = acceleration_histogram([-0.3, -0.7, -0.7, 0.0, 0.02, 1.2, -4.0], deadband_ms2=0.05)
    assert hist.decel_samples == 4
    assert hist.accel_samples == 1
    assert hist.decel["0.0-0.5"] == pytest.approx(0.25)
    assert hist.decel["0.5-1.0"] == pytest.approx(0.5)
    assert hist.decel["3.0-inf"] == pytest.approx(0.25)
    assert hist.accel["1.0-1.5"] == pytest.approx(1.0)
    assert sum(hist.decel.values()) == pytest.approx(1.0)
    assert [row["bin"] for row in hist.to_rows()] == list(BIN_LABELS)


def test_empty_histogram_is_all_zero():
    hist = acceleration_histogram([0.0, 0.01])
    assert set(hist.decel.values()) == {0.0}
    assert hist.decel_samples == 0


def test_integrate_constant_power():
    samples = [
        PowerSample(t=float(t), v=10.0, a=0.0, traction_power_w=1000.0, s=10.0 * t,
                    phase=PhaseLabel.CRUISE)
        for t in range(11)
    ]
    report = integrate_energy(samples, mass_kg=1500.0, p_opt_w=800.0)
    assert report.traction_energy_j == pytest.approx(10000.0)
    assert report.distance_m == pytest.approx(100.0)
    assert report.duration_s == pytest.approx(10.0)
    assert report.kinetic_gain_j == 0.0
    assert report.mean_cruise_power_dev_w == pytest.approx(200.0)


def test_regen_efficiency_scales_recovered_energy():
    samples = [PowerSample(t=float(t), v=10.0, a=-1.0, regen_power_w=500.0) for t in range(3)]
    full = integrate_energy(samples)
    half = integrate_energy(samples, regen_efficiency=0.5)
    assert full.regen_energy_j == pytest.approx(1000.0)
    assert half.regen_energy_j == pytest.approx(500.0)
    assert full.proxy_energy_j == pytest.approx(20.0)
    assert full.distance_m == pytest.approx(20.0)
    assert full.mean_cruise_power_dev_w is None


def test_integration_needs_increasing_times():
    with pytest.raises(DomainError):
        integrate_energy([PowerSample(t=0.0, v=1.0, a=0.0)])
    with pytest.raises(DomainError):
        integrate_energy([PowerSample(t=1.0, v=1.0, a=0.0), PowerSample(t=1.0, v=1.0, a=0.0)])


def test_audit_balances_steady_cruise():
    samples = [
        PowerSample(t=float(t), v=10.0, a=0.0, traction_power_w=2611.5, resistive_power_w=2611.5)
        for t in range(5)
    ]
    report = integrate_energy(samples, mass_kg=1500.0)
    audit = energy_audit(report)
    assert audit.imbalance_j == pytest.approx(0.0, abs=1e-9)
    assert audit.within(1e-9)


def test_audit_counts_recovery_before_efficiency():
    report = _report(
        traction_energy_j=1000.0, regen_energy_j=150.0, brake_loss_j=50.0,
        resistive_work_j=500.0, kinetic_gain_j=150.0,
    )
    audit = energy_audit(report, regen_efficiency=0.5)
    assert audit.consumed_j == pytest.approx(150.0 + 500.0 + 50.0 + 300.0)
    assert audit.imbalance_j == pytest.approx(0.0)


def test_report_dict_roundtrip():
    report = _report(mean_cruise_power_dev_w=12.5)
    assert EnergyReport.from_dict(report.to_dict()) == report
    assert AccelHistogram.from_dict(report.to_dict()["accel_histogram"]) == report.accel_histogram


def test_compare_reports():
    ehmpp = _report(regen_energy_j=300.0, accel_histogram=acceleration_histogram([-0.7, -0.7]))
    baseline = _report(brake_loss_j=0.0, accel_histogram=acceleration_histogram([-0.3, -0.7]))
    comparison = compare_reports(ehmpp, baseline)
    regen = comparison.channels["regen_energy_j"]
    assert regen.delta == pytest.approx(100.0)
    assert regen.ratio == pytest.approx(1.5)
    assert comparison.channels["brake_loss_j"].ratio is None
    assert comparison.headline_bin == HEADLINE_BIN
    assert comparison.headline.delta_points == pytest.approx(-50.0)
    assert comparison.decel_bins["0.5-1.0"].relative_delta == pytest.approx(1.0)
    assert comparison.flags == ()
    assert comparison.to_dict()["flags"] == []


def test_compare_flags_distance_mismatch():
    comparison = compare_reports(_report(), _report(distance_m=150.0))
    assert comparison.flags == ("distance_mismatch",)


def test_compare_rejects_different_scenarios():
    with pytest.raises(ComparisonError):
        compare_reports(_report(), _report(scenario_hash="other"))
