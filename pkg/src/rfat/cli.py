"""Command-line harness: simulate, gen-data, train-twin, eval-twin, optimize,
train-policy, run-loop.

Every artifact embeds the schema version and the producing seed, contains no
timestamps, and is byte-identical across repeated runs with the same config
and seed. Exit codes: 0 success, 1 validation error, 2 runtime/training
error. Set RFAT_LOG to control log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import agents as ag
from . import chain as ch
from . import dataset as ds
from . import signal as sig
from . import twin as tw
from .buckets import bucket_center
from .config import RunConfig, load_config
from .errors import ConfigError, DatasetLoadError, GpFitError, ParameterError, TrainingError
from .serialize import SCHEMA_VERSION, csv_header_comment, to_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (validation) on unknown flags, naming them."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _make_stimulus(cfg: RunConfig, seed: int):
    w = cfg.waveform
    return sig.generate_qam_frame(
        w.n_symbols, w.constellation_order, w.sps, w.rolloff,
        seed=seed, symbol_rate_hz=w.symbol_rate_hz,
    )


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    logger.info("wrote %s", path)
    return path


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing {what}: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args) -> int:
    stimulus = _make_stimulus(cfg, args.seed)
    scn = ch.Scenario(
        cfg.simulate.input_power_dbfs, cfg.simulate.carrier_offset_hz, noise_seed=args.seed
    )
    hw = cfg.simulate.hardware_config()
    out = ch.run_chain(stimulus, hw, scn, cfg.chain)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "seed": args.seed,
        "scenario": scn.as_dict(),
        "config": hw.as_dict(),
        "probes": {"p_lna_dbfs": out.probes.p_lna_dbfs, "p_if_dbfs": out.probes.p_if_dbfs},
        "evm_percent": out.evm_percent,
    }
    _write(args.out / "run.json", to_json(doc) + "\n")
    print(f"EVM {out.evm_percent:.3f}%  p_lna {out.probes.p_lna_dbfs:.2f} dBFS  "
          f"p_if {out.probes.p_if_dbfs:.2f} dBFS")
    return EXIT_OK


def cmd_gen_data(cfg: RunConfig, args) -> int:
    stimulus = _make_stimulus(cfg, args.seed)
    points = ds.sample_random_configs(cfg.dataset.n_random, seed=args.seed)
    executor = lambda s, c, scn: ch.run_chain(s, c, scn, cfg.chain)
    records = [
        ds.evaluate_config(executor, stimulus, scn, hw, source="random", seed=args.seed + i)
        for i, (scn, hw) in enumerate(points)
    ]
    ds.save_dataset(records, args.out / "dataset.jsonl")
    print(f"wrote {len(records)} records to {args.out / 'dataset.jsonl'}")
    return EXIT_OK


def cmd_train_twin(cfg: RunConfig, args) -> int:
    t = cfg.twin
    pairs = []
    for level in t.drive_levels_dbfs:
        for k in range(t.frames_per_level):
            frame = sig.generate_qam_frame(
                t.train_symbols, cfg.waveform.constellation_order, cfg.waveform.sps,
                cfg.waveform.rolloff, seed=args.seed + 37 * k + int(abs(level) * 1000),
                symbol_rate_hz=cfg.waveform.symbol_rate_hz,
            )
            u = frame.samples * 10.0 ** (level / 20.0)
            pairs.append((u, ch.memory_polynomial(u, cfg.chain.if_amp_coeffs)))
    model, report = tw.arvtdnn_train(pairs, t.train_settings(), seed=args.seed)
    meta = {
        "seed": report.seed,
        "epochs": report.epochs_run,
        "final_nmse_db": report.final_nmse_db,
        "schema_version": SCHEMA_VERSION,
    }
    tw.save_model(model, args.out / "model.json", meta)
    print(f"trained {report.epochs_run} epochs, validation NMSE {report.final_nmse_db:.1f} dB")
    return EXIT_OK


def cmd_eval_twin(cfg: RunConfig, args) -> int:
    model_path = args.model or (args.out / "model.json")
    model = tw.load_model(_require(Path(model_path), "twin model"))
    frame = _make_stimulus(cfg, args.seed)
    drive = frame.with_samples(frame.samples * 10.0 ** (cfg.twin.eval_drive_dbfs / 20.0))
    truth = lambda x: ch.memory_polynomial(x, cfg.chain.if_amp_coeffs)
    psd, amam = tw.export_validation_data(model, truth, drive)

    head = csv_header_comment(args.seed)
    psd_lines = [head, "freq_hz,input_db,truth_db,twin_db"]
    psd_lines += [",".join(format(v, ".17g") for v in row) for row in psd]
    _write(args.out / "psd.csv", "\n".join(psd_lines) + "\n")

    amam_lines = [head, "in_env,truth_out_env,twin_out_env"]
    amam_lines += [",".join(format(v, ".17g") for v in row) for row in amam]
    _write(args.out / "amam.csv", "\n".join(amam_lines) + "\n")

    nmse = tw.nmse_db(truth(drive.samples), tw.arvtdnn_forward(model, drive.samples))
    print(f"eval drive {cfg.twin.eval_drive_dbfs:.1f} dBFS: NMSE {nmse:.1f} dB")
    return EXIT_OK


def _twin_executor(cfg: RunConfig, model_path: Path):
    model = tw.load_model(_require(model_path, "twin model"))
    twin = tw.TwinChain(params=cfg.chain, if_amp_model=model)
    return lambda s, c, scn: tw.twin_run_chain(twin, s, c, scn)


def cmd_optimize(cfg: RunConfig, args) -> int:
    data_path = args.data or (args.out / "dataset.jsonl")
    stage1 = ds.load_dataset(_require(Path(data_path), "stage-1 dataset"))
    if args.executor == "chain":
        executor = lambda s, c, scn: ch.run_chain(s, c, scn, cfg.chain)
    else:
        executor = _twin_executor(cfg, Path(args.model or (args.out / "model.json")))

    stimulus = _make_stimulus(cfg, args.seed)
    grouped = ds.group_by_bucket(stage1)
    all_records, best = [], {}
    for i, key in enumerate(sorted(grouped)):
        power, cfo = bucket_center(key)
        scn = ch.Scenario(power, cfo, noise_seed=args.seed + 5000 + i)
        res = ds.bo_run(
            executor, stimulus, scn,
            n_init=cfg.dataset.n_init, n_bo=cfg.dataset.n_bo,
            seed=args.seed + 100 * i, stage1_records=grouped[key],
            candidate_pool=cfg.dataset.candidate_pool,
        )
        all_records.extend(res.records)
        best[f"{key[0]},{key[1]}"] = {
            "config": res.best_config.as_dict(),
            "evm_percent": res.best_evm_percent,
        }
    ds.save_dataset(all_records, args.out / "bo_records.jsonl")
    _write(
        args.out / "best_configs.json",
        to_json({"schema_version": SCHEMA_VERSION, "seed": args.seed, "buckets": best}) + "\n",
    )
    print(f"optimized {len(grouped)} bucket(s); wrote {len(all_records)} BO records")
    return EXIT_OK


def cmd_train_policy(cfg: RunConfig, args) -> int:
    paths = args.data or [args.out / "dataset.jsonl"]
    records = []
    for p in paths:
        records.extend(ds.load_dataset(_require(Path(p), "dataset")))
    extra = args.out / "bo_records.jsonl"
    if not args.data and extra.exists():
        records.extend(ds.load_dataset(extra))
    components = {}
    for cid in ag.COMPONENT_ORDER:
        policy = ag.policy_train(records, cid)
        components[cid] = {
            f"{k[0]},{k[1]}": [[list(values), evm] for values, evm in ranked]
            for k, ranked in sorted(policy.entries.items())
        }
    doc = {"schema_version": SCHEMA_VERSION, "seed": args.seed, "components": components}
    _write(args.out / "policies.json", to_json(doc) + "\n")
    print(f"trained policies for {len(components)} components on {len(records)} records")
    return EXIT_OK


def load_policies(path: Path) -> dict:
    doc = json.loads(_require(path, "policy file").read_text())
    agents = {}
    for cid, buckets_doc in doc["components"].items():
        entries = {}
        for key_str, ranked in buckets_doc.items():
            pi, fi = (int(v) for v in key_str.split(","))
            entries[(pi, fi)] = [(tuple(values), float(evm)) for values, evm in ranked]
        agents[cid] = ag.Agent(cid, policy=ag.Policy(component_id=cid, entries=entries))
    return agents


def cmd_run_loop(cfg: RunConfig, args) -> int:
    agents = load_policies(Path(args.policies or (args.out / "policies.json")))
    model = tw.load_model(_require(Path(args.model or (args.out / "model.json")), "twin model"))
    twin = tw.TwinChain(params=cfg.chain, if_amp_model=model)
    stimulus = _make_stimulus(cfg, args.seed)
    executor = lambda s, c, scn: ch.run_chain(s, c, scn, cfg.chain)
    schedule = cfg.loop.schedule(args.seed)
    budget = args.budget or cfg.loop.budget
    trace = ag.control_loop(executor, twin, agents, schedule, stimulus, budget=budget,
                            params=cfg.chain)
    _write(args.out / "trace.csv", trace.to_csv(seed=args.seed))
    evms = trace.measured_evms()
    print(f"ran {len(trace)} steps; median EVM {np.median(evms):.2f}%  final {evms[-1]:.2f}%")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rfat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **extra_args):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=0, help="global seed")
        p.add_argument("--out", type=Path, default=Path("out"), help="artifact directory")
        p.add_argument("--budget", type=int, default=None, help="coordination budget")
        for flag, kwargs in extra_args.items():
            p.add_argument(flag, **kwargs)
        p.set_defaults(func=fn)
        return p

    add("simulate", cmd_simulate)
    add("gen-data", cmd_gen_data)
    add("train-twin", cmd_train_twin)
    add("eval-twin", cmd_eval_twin, **{"--model": dict(type=Path, default=None)})
    add(
        "optimize",
        cmd_optimize,
        **{
            "--data": dict(type=Path, default=None),
            "--model": dict(type=Path, default=None),
            "--executor": dict(choices=("twin", "chain"), default="twin"),
        },
    )
    add("train-policy", cmd_train_policy, **{"--data": dict(type=Path, nargs="+", default=None)})
    add(
        "run-loop",
        cmd_run_loop,
        **{
            "--policies": dict(type=Path, default=None),
            "--model": dict(type=Path, default=None),
        },
    )
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("RFAT_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        return args.func(cfg, args)
    except (ConfigError, ParameterError, DatasetLoadError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingError, GpFitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - unexpected failure
        logger.exception("unhandled error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
