"""Python layer over the simulator core.

The heavy lifting lives in the compiled ``_core`` module; these wrappers just
translate between Python dicts and the JSON-string interfaces it exposes.
"""

import json

from . import _core
from ._core import (  # noqa: F401
    Basis,
    GhzMeasurement,
    GhzOutcome,
    GhzProbabilities,
    JointState,
    Rng,
    Spectrum,
    DEFAULT_VERIFY_SEED,
    TRANSCRIPT_SCHEMA,
    apply_phase,
    apply_phase_all,
    bound,
    eve_view_density_invariance_check,
    ghz_probabilities,
    measure_energy_all,
    measure_ghz,
    measure_single_probe,
    prepare_energy,
    prepare_noon,
    prepare_noon_imag,
    state_cap,
)

__all__ = [
    "Basis",
    "GhzMeasurement",
    "GhzOutcome",
    "GhzProbabilities",
    "JointState",
    "Rng",
    "Spectrum",
    "DEFAULT_VERIFY_SEED",
    "TRANSCRIPT_SCHEMA",
    "apply_phase",
    "apply_phase_all",
    "bb84_keygen",
    "bound",
    "eve_information_report",
    "eve_view_density_invariance_check",
    "expectation_from_transcript",
    "ghz_probabilities",
    "ladder_estimate",
    "measure_energy_all",
    "measure_ghz",
    "measure_single_probe",
    "prepare_energy",
    "prepare_noon",
    "prepare_noon_imag",
    "run_experiment",
    "run_protocol",
    "run_verify",
    "state_cap",
]


def run_protocol(params=None, adversary=None):
    """Run one protocol execution and return the transcript as a dict.

    ``params`` follows the documented config schema's ``params`` object; the
    party count ``k`` selects the scheme (0 single, 1 two-party, >= 2 shares).
    """
    params = dict(params or {})
    adversary = dict(adversary or {"kind": "passive"})
    raw = _core.run_protocol_json(json.dumps(params), json.dumps(adversary))
    return json.loads(raw)


def expectation_from_transcript(transcript):
    value, count = _core.expectation_from_transcript_json(json.dumps(transcript))
    return {"value": value, "count": count}


def ladder_estimate(transcripts, max_per_level=0):
    raw = _core.ladder_estimate_json(
        [json.dumps(t) for t in transcripts], max_per_level
    )
    return json.loads(raw)


def bb84_keygen(length, seed, eavesdropped=False, qber_threshold=0.11):
    return json.loads(
        _core.bb84_keygen_json(length, seed, eavesdropped, qber_threshold)
    )


def eve_information_report(params=None, kappa=1):
    return json.loads(
        _core.eve_information_report_json(json.dumps(dict(params or {})), kappa)
    )


def run_experiment(config):
    return json.loads(_core.run_experiment_json(json.dumps(config)))


def run_verify(seed=DEFAULT_VERIFY_SEED, parallelism=0):
    return json.loads(_core.run_verify_json(seed, parallelism))
