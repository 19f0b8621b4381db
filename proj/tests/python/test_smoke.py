"""End-to-end smoke checks of the compiled module through the dict wrappers."""

import math

import pytest

import qcmsim


def test_state_primitives():
    st = qcmsim.prepare_noon(3, +1)
    assert st.n == 3
    assert st.norm2() == pytest.approx(1.0, abs=1e-12)
    amps = st.amps
    assert amps[0] == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert amps[7] == pytest.approx(1 / math.sqrt(2), abs=1e-12)

    sp = qcmsim.Spectrum(0.0, 1.0)
    assert sp.gap() == 1.0
    with pytest.raises(ValueError):
        qcmsim.Spectrum(0.0, 2.0)

    qcmsim.apply_phase_all(st, math.pi / 3, sp)
    probs = qcmsim.ghz_probabilities(st, False)
    # Three probes at theta = pi/3 flip the parity deterministically.
    assert probs.p_minus == pytest.approx(1.0, abs=1e-12)


def test_rng_is_deterministic():
    a = qcmsim.Rng(12345, 1)
    b = qcmsim.Rng(12345, 1)
    assert [a.uniform() for _ in range(5)] == [b.uniform() for _ in range(5)]


def test_run_protocol_round_trip():
    t = qcmsim.run_protocol({"N": 3, "nu": 300, "seed": 5, "phi_true": 0.0})
    assert t["schema"] == qcmsim.TRANSCRIPT_SCHEMA
    assert not t["aborted"]
    assert len(t["rounds"]) == 300

    e = qcmsim.expectation_from_transcript(t)
    assert e["count"] > 40
    assert e["value"] == pytest.approx(1.0, abs=1e-12)


def test_run_protocol_rejects_bad_params():
    with pytest.raises(ValueError):
        qcmsim.run_protocol({"N": 0})


def test_adversary_detection():
    t = qcmsim.run_protocol({"N": 3, "nu": 5, "seed": 6},
                            {"kind": "probe_injector", "extra": 1})
    assert t["aborted"]
    assert t["probe_count_violation"]


def test_bound_examples():
    assert qcmsim.bound("single_party", 4, 300) == pytest.approx(1 / 1600, abs=1e-15)
    assert qcmsim.bound("heisenberg", 1, 1) == pytest.approx(1.0, abs=1e-15)


def test_bb84_keygen():
    clean = qcmsim.bb84_keygen(64, seed=11)
    assert not clean["aborted"]
    assert len(clean["bits"]) == 64

    tapped = qcmsim.bb84_keygen(256, seed=12, eavesdropped=True)
    assert tapped["aborted"]


def test_eve_information_report():
    rep = qcmsim.eve_information_report({"N": 4}, kappa=3)
    assert rep["max_qfi"] == pytest.approx(48.0, abs=1e-12)
    assert rep["success_probability"] == pytest.approx(1 / 8, abs=1e-12)
    assert rep["undetected_per_round"] == pytest.approx(5 / 6, abs=1e-12)


def test_run_experiment_passes():
    report = qcmsim.run_experiment({
        "scenario": "single_party",
        "params": {"N": 3, "nu": 200, "seed": 9},
        "adversary": {"kind": "passive"},
        "trials": 2,
    })
    assert report["pass"]
    assert report["checks"]


def test_ladder_estimate():
    levels = [
        qcmsim.run_protocol({"N": 1, "nu": 2400, "seed": 21, "phi_true": 0.4,
                             "quadrature_fraction": 0.5}),
        qcmsim.run_protocol({"N": 2, "nu": 2400, "seed": 22, "phi_true": 0.4}),
    ]
    res = qcmsim.ladder_estimate(levels, max_per_level=600)
    assert not res["failed"]
    assert res["phi_hat"] == pytest.approx(0.4, abs=0.1)
    assert res["analytic_bound"] > 0
