"""Shared fixtures: the expensive trained artifacts are session-scoped."""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from rfat import agents as ag
from rfat import chain as ch
from rfat import dataset as ds
from rfat import signal as sig
from rfat import twin as tw
from rfat.buckets import bucket_center

TWIN_DRIVE_LEVELS_DBFS = (0.0, -5.0, -10.0, -15.0, -20.0, -25.0, -30.0)


def make_if_amp_pairs(levels=TWIN_DRIVE_LEVELS_DBFS, seeds=(1, 2, 3), n_symbols=512):
    """(post-gain input, ground-truth output) frames across the drive sweep."""
    pairs = []
    for level in levels:
        for seed in seeds:
            f = sig.generate_qam_frame(n_symbols, 16, 8, 0.25, seed=seed + int(abs(level) * 1000))
            u = f.samples * 10.0 ** (level / 20.0)
            y = ch.memory_polynomial(u, ch.DEFAULT_PARAMS.if_amp_coeffs)
            pairs.append((u, y))
    return pairs


def make_heldout_pair(level_dbfs, n_symbols=512, seed_base=777):
    """A fresh frame (seed disjoint from training) at one drive level."""
    f = sig.generate_qam_frame(n_symbols, 16, 8, 0.25, seed=seed_base + int(abs(level_dbfs)))
    u = f.samples * 10.0 ** (level_dbfs / 20.0)
    y = ch.memory_polynomial(u, ch.DEFAULT_PARAMS.if_amp_coeffs)
    return f.with_samples(u), y


@pytest.fixture(scope="session")
def stim_frame():
    return sig.generate_qam_frame(1024, 16, 8, 0.25, seed=7)


@pytest.fixture(scope="session")
def trained_if_model():
    pairs = make_if_amp_pairs()
    t0 = time.perf_counter()
    model, report = tw.arvtdnn_train(pairs, tw.TrainSettings(), seed=11)
    elapsed = time.perf_counter() - t0
    return model, report, elapsed


@pytest.fixture(scope="session")
def trained_twin(trained_if_model):
    model, _, _ = trained_if_model
    return tw.TwinChain(params=ch.DEFAULT_PARAMS, if_amp_model=model)


@pytest.fixture(scope="session")
def control_pipeline(trained_twin):
    """Dataset (random stage + BO stage), trained policies, and executors."""
    stimulus = sig.generate_qam_frame(512, 16, 8, 0.25, seed=42)
    chain_exec = lambda s, c, scn: ch.run_chain(s, c, scn)
    twin_exec = lambda s, c, scn: tw.twin_run_chain(trained_twin, s, c, scn)

    t0 = time.perf_counter()
    points = ds.sample_random_configs(220, seed=5)
    records = [
        ds.evaluate_config(chain_exec, stimulus, s, c, seed=100 + i)
        for i, (s, c) in enumerate(points)
    ]
    bo_records = []
    for i, key in enumerate(sorted(ds.group_by_bucket(records))):
        pwr, cfo = bucket_center(key)
        scn = ch.Scenario(pwr, cfo, 7000 + i)
        res = ds.bo_run(
            twin_exec, stimulus, scn, n_init=6, n_bo=10, seed=300 + i,
            stage1_records=ds.group_by_bucket(records)[key],
        )
        bo_records.extend(res.records)
    library = records + bo_records
    agents = {
        cid: ag.Agent(cid, policy=ag.policy_train(library, cid)) for cid in ag.COMPONENT_ORDER
    }
    elapsed = time.perf_counter() - t0
    return SimpleNamespace(
        stimulus=stimulus,
        twin=trained_twin,
        chain_exec=chain_exec,
        twin_exec=twin_exec,
        records=library,
        agents=agents,
        build_seconds=elapsed,
    )
