"""MDP description files (JSON) and CSV helpers."""
from __future__ import annotations

import csv
import json

import numpy as np

from .environments import EnvironmentBundle
from .mdp import FeatureMap, InvalidArgumentError, Mdp, MdpValidationError, validate_mdp

MDP_KEYS = {"n_states", "n_actions", "gamma", "tau", "transition", "initial_dist"}
OPTIONAL_KEYS = {"features", "expert", "w_true", "provenance"}


def load_mdp_file(path) -> EnvironmentBundle:
    """Read an MDP description; missing expert defaults to the uniform policy.

    Raises :class:`MdpValidationError` listing every violated invariant.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise InvalidArgumentError(f"{path}: expected a JSON object")
    missing = MDP_KEYS - doc.keys()
    unknown = doc.keys() - MDP_KEYS - OPTIONAL_KEYS
    if missing:
        raise InvalidArgumentError(f"{path}: missing keys {sorted(missing)}")
    if unknown:
        raise InvalidArgumentError(f"{path}: unknown keys {sorted(unknown)}")
    m = Mdp(doc["transition"], doc["initial_dist"], doc["gamma"], doc["tau"])
    if (m.n_states, m.n_actions) != (doc["n_states"], doc["n_actions"]):
        raise InvalidArgumentError(
            f"{path}: transition shape {m.transition.shape} disagrees with n_states/n_actions")
    problems = validate_mdp(m)
    if problems:
        raise MdpValidationError(problems)
    if "features" in doc:
        phi = FeatureMap(doc["features"])
    else:
        phi = FeatureMap.one_hot_state_action(m.n_states, m.n_actions)
    if phi.values.shape[:2] != (m.n_states, m.n_actions):
        raise InvalidArgumentError(f"{path}: features must have shape (n_states, n_actions, k)")
    pi_e = np.asarray(doc.get("expert", np.full((m.n_states, m.n_actions), 1.0 / m.n_actions)))
    w_true = np.asarray(doc["w_true"], dtype=float) if doc.get("w_true") is not None else None
    prov = dict(doc.get("provenance", {}), file=str(path))
    return EnvironmentBundle(mdp=m, phi=phi, pi_expert=pi_e, w_true=w_true, provenance=prov)


def bundle_to_dict(bundle: EnvironmentBundle) -> dict:
    m = bundle.mdp
    doc = {
        "n_states": m.n_states,
        "n_actions": m.n_actions,
        "gamma": m.gamma,
        "tau": m.tau,
        "transition": m.transition.tolist(),
        "initial_dist": m.initial_dist.tolist(),
        "features": bundle.phi.values.tolist(),
        "expert": np.asarray(bundle.pi_expert).tolist(),
        "provenance": bundle.provenance,
    }
    if bundle.w_true is not None:
        doc["w_true"] = np.asarray(bundle.w_true).tolist()
    return doc


def save_bundle(bundle: EnvironmentBundle, path):
    with open(path, "w") as fh:
        json.dump(bundle_to_dict(bundle), fh, indent=1)
        fh.write("\n")


def fmt(x) -> str:
    """Locale-free, round-trippable cell text."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([fmt(row.get(col)) for col in header])
