"""Command-line interface: files in, JSON/JSONL out.

Each subcommand is a thin shell over one library operation. Exit codes:

* 0 — success (a run manifest is written next to the output),
* 2 — usage errors (bad flags, missing required combinations),
* 3 — schema errors while loading shared inputs,
* 4 — data errors while processing samples (first failure aborts the
  run; the diagnostic names the sample).

Data outputs go to ``--out``; diagnostics go to stderr; the run
manifest goes to ``<out>.manifest.json`` (and ``cmd_simulate``
additionally writes the per-selection log to
``<out>.selections.jsonl``). ``POSELIK_THREADS`` caps batch
parallelism (default 1); output lines always follow input-manifest
order.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from . import __version__
from .calibration import (
    LabeledPoseSet,
    fit_model,
    load_image_params,
    read_labeled_poses,
    save_model_with_meta,
)
from .errors import MissingJoint, MissingParams, PoseLikError
from .heatmaps import (
    DEFAULT_MAX_PEAKS,
    DEFAULT_THRESHOLD_RATIO,
    extract_peaks,
    read_heatmap_file,
    read_manifest,
)
from .likelihood import (
    expected_log_likelihood,
    multi_peak_entropy,
    point_log_likelihood,
    refine_pose,
)
from .model import load_model_file, load_skeleton_file
from .selection import _random_score, select_batch
from .simulation import SimulationConfig, run_simulation

TOOL_NAME = "poselik"


class _SampleFailure(Exception):
    """A per-sample error, already annotated with the sample id."""


# --- run manifest ----------------------------------------------------------------

def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_manifest(
    out_path: str,
    command: str,
    config: dict,
    input_paths: dict[str, str],
    seed: int | None,
    io_ms: float,
    compute_ms: float,
    total_ms: float,
    samples: int,
) -> None:
    manifest = {
        "tool": TOOL_NAME,
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {
            name: {"path": str(path), "sha256": _sha256_file(path)}
            for name, path in input_paths.items()
        },
        "seed": seed,
        "timings_ms": {"io": io_ms, "compute": compute_ms, "total": total_ms},
        "samples": samples,
    }
    with open(f"{out_path}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_jsonl(path: str, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def _write_json(path: str, document: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- per-sample batch driver -------------------------------------------------------

def _thread_count() -> int:
    raw = os.environ.get("POSELIK_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError:
        threads = 0
    if threads < 1:
        print(
            f"{TOOL_NAME}: error: POSELIK_THREADS must be a positive integer, "
            f"got {raw!r}",
            file=sys.stderr,
        )
        raise SystemExit(2)
    return threads


def _process_samples(entries, worker, threads: int):
    """Run ``worker(id, path) -> (record, io_ms, compute_ms)`` over a batch.

    Results keep manifest order regardless of completion order; the first
    failure aborts with a :class:`_SampleFailure` naming the sample.
    """

    def run(entry):
        sample_id, path = entry
        try:
            return worker(sample_id, path)
        except (PoseLikError, OSError) as exc:
            raise _SampleFailure(f"sample {sample_id!r}: {exc}") from exc

    records: list[dict] = []
    io_ms = compute_ms = 0.0
    if threads == 1:
        produced = map(run, entries)
        for record, io_part, compute_part in produced:
            records.append(record)
            io_ms += io_part
            compute_ms += compute_part
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for record, io_part, compute_part in pool.map(run, entries):
                records.append(record)
                io_ms += io_part
                compute_ms += compute_part
    return records, io_ms, compute_ms


# --- subcommands -----------------------------------------------------------------

def cmd_score(args, threads: int) -> int:
    started = time.perf_counter()
    try:
        skeleton = load_skeleton_file(args.skeleton)
        if args.per_image:
            params_map = load_image_params(args.params, skeleton)
            shared_params = None
        else:
            shared_params = load_model_file(args.params)
            if shared_params.skeleton != skeleton:
                raise PoseLikError(
                    f"{args.params}: embedded skeleton does not match {args.skeleton}"
                )
            params_map = None
        entries = read_manifest(args.heatmaps)
        poses_by_id = None
        if args.mode == "point":
            poses_by_id = dict(read_labeled_poses(args.poses))
    except (PoseLikError, OSError) as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 3

    def params_for(sample_id: str):
        if params_map is None:
            return shared_params
        found = params_map.get(sample_id)
        if found is None:
            raise MissingParams(f"no model parameters for sample {sample_id!r}")
        return found

    def worker(sample_id: str, path: str):
        if args.mode == "point":
            pose = poses_by_id.get(sample_id)
            if pose is None:
                raise MissingJoint(f"no pose provided for sample {sample_id!r}")
            t0 = time.perf_counter()
            report = point_log_likelihood(pose, params_for(sample_id))
            t1 = time.perf_counter()
            return report.to_json_dict(sample_id), 0.0, (t1 - t0) * 1000.0
        t0 = time.perf_counter()
        heatmap = read_heatmap_file(path)
        t1 = time.perf_counter()
        peaks = extract_peaks(heatmap)
        report = expected_log_likelihood(peaks, params_for(sample_id))
        t2 = time.perf_counter()
        return report.to_json_dict(sample_id), (t1 - t0) * 1000.0, (t2 - t1) * 1000.0

    try:
        records, io_ms, compute_ms = _process_samples(entries, worker, threads)
    except _SampleFailure as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 4

    _write_jsonl(args.out, records)
    inputs = {"skeleton": args.skeleton, "params": args.params, "heatmaps": args.heatmaps}
    if args.poses:
        inputs["poses"] = args.poses
    _write_run_manifest(
        args.out,
        "score",
        {
            "mode": args.mode,
            "per_image": bool(args.per_image),
            "out": args.out,
        },
        inputs,
        None,
        io_ms,
        compute_ms,
        (time.perf_counter() - started) * 1000.0,
        len(records),
    )
    return 0


def cmd_refine(args, threads: int) -> int:
    started = time.perf_counter()
    try:
        skeleton = load_skeleton_file(args.skeleton)
        params = load_model_file(args.params)
        if params.skeleton != skeleton:
            raise PoseLikError(
                f"{args.params}: embedded skeleton does not match {args.skeleton}"
            )
        entries = read_manifest(args.heatmaps)
    except (PoseLikError, OSError) as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 3

    def worker(sample_id: str, path: str):
        t0 = time.perf_counter()
        heatmap = read_heatmap_file(path)
        t1 = time.perf_counter()
        peaks = extract_peaks(heatmap)
        refined = refine_pose(peaks, params)
        report = point_log_likelihood(refined.pose, params)
        t2 = time.perf_counter()
        return (
            refined.to_json_dict(sample_id, report),
            (t1 - t0) * 1000.0,
            (t2 - t1) * 1000.0,
        )

    try:
        records, io_ms, compute_ms = _process_samples(entries, worker, threads)
    except _SampleFailure as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 4

    _write_jsonl(args.out, records)
    _write_run_manifest(
        args.out,
        "refine",
        {"out": args.out},
        {"skeleton": args.skeleton, "params": args.params, "heatmaps": args.heatmaps},
        None,
        io_ms,
        compute_ms,
        (time.perf_counter() - started) * 1000.0,
        len(records),
    )
    return 0


def _score_from_record(record: dict, strategy: str, where: str) -> float:
    candidates = ("score", "total") if strategy == "vl4pose" else ("score", "entropy")
    for key in candidates:
        if key in record:
            value = record[key]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise PoseLikError(f"{where}: field {key!r} must be a number")
            return float(value)
    raise PoseLikError(
        f"{where}: no usable score field (looked for {list(candidates)})"
    )


def cmd_select(args, threads: int) -> int:
    started = time.perf_counter()
    io_start = time.perf_counter()
    try:
        scores: dict[str, float] = {}
        with open(args.scores, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                where = f"{args.scores}:{lineno}"
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    raise PoseLikError(f"{where}: invalid JSON") from None
                if not isinstance(record, dict) or "id" not in record:
                    raise PoseLikError(f"{where}: expected an object with an 'id'")
                sample_id = str(record["id"])
                if sample_id in scores:
                    raise PoseLikError(f"{where}: duplicate sample id {sample_id!r}")
                if args.strategy == "random":
                    scores[sample_id] = _random_score(args.seed, sample_id)
                else:
                    scores[sample_id] = _score_from_record(record, args.strategy, where)
    except (PoseLikError, OSError) as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 3
    io_ms = (time.perf_counter() - io_start) * 1000.0

    compute_start = time.perf_counter()
    try:
        result = select_batch(scores, args.strategy, args.budget)
    except PoseLikError as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 4
    compute_ms = (time.perf_counter() - compute_start) * 1000.0

    _write_json(
        args.out,
        {
            "strategy": result.strategy,
            "budget": args.budget,
            "selected": list(result.selected),
            "scores": {k: result.scores[k] for k in sorted(result.scores)},
        },
    )
    _write_run_manifest(
        args.out,
        "select",
        {"strategy": args.strategy, "budget": args.budget, "out": args.out},
        {"scores": args.scores},
        args.seed,
        io_ms,
        compute_ms,
        (time.perf_counter() - started) * 1000.0,
        len(scores),
    )
    return 0


def cmd_calibrate(args, threads: int) -> int:
    started = time.perf_counter()
    io_start = time.perf_counter()
    try:
        skeleton = load_skeleton_file(args.skeleton)
        labeled = read_labeled_poses(args.labeled)
    except (PoseLikError, OSError) as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 3
    io_ms = (time.perf_counter() - io_start) * 1000.0

    compute_start = time.perf_counter()
    try:
        data = LabeledPoseSet.of(skeleton, [pose for _, pose in labeled])
        fitted = fit_model(data, args.model)
    except PoseLikError as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 4
    compute_ms = (time.perf_counter() - compute_start) * 1000.0

    save_model_with_meta(args.out, fitted, data.n_poses)
    _write_run_manifest(
        args.out,
        "calibrate",
        {"model": args.model, "out": args.out},
        {"skeleton": args.skeleton, "labeled": args.labeled},
        None,
        io_ms,
        compute_ms,
        (time.perf_counter() - started) * 1000.0,
        data.n_poses,
    )
    return 0


def cmd_maxima(args, threads: int) -> int:
    started = time.perf_counter()
    try:
        entries = read_manifest(args.heatmaps)
    except (PoseLikError, OSError) as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 3

    def worker(sample_id: str, path: str):
        t0 = time.perf_counter()
        heatmap = read_heatmap_file(path)
        t1 = time.perf_counter()
        peaks = extract_peaks(heatmap, args.threshold, args.max_peaks)
        record = {
            "id": sample_id,
            "entropy": multi_peak_entropy(peaks),
            "peaks": [
                [
                    {"loc": [p.loc[0], p.loc[1]], "score": p.score, "prob": p.prob}
                    for p in joint_peaks
                ]
                for joint_peaks in peaks.peaks
            ],
        }
        t2 = time.perf_counter()
        return record, (t1 - t0) * 1000.0, (t2 - t1) * 1000.0

    try:
        records, io_ms, compute_ms = _process_samples(entries, worker, threads)
    except _SampleFailure as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 4

    _write_jsonl(args.out, records)
    _write_run_manifest(
        args.out,
        "maxima",
        {"threshold": args.threshold, "max_peaks": args.max_peaks, "out": args.out},
        {"heatmaps": args.heatmaps},
        None,
        io_ms,
        compute_ms,
        (time.perf_counter() - started) * 1000.0,
        len(records),
    )
    return 0


def cmd_simulate(args, threads: int) -> int:
    started = time.perf_counter()
    io_start = time.perf_counter()
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        cfg = SimulationConfig.from_dict(raw)
    except json.JSONDecodeError as exc:
        print(f"{TOOL_NAME}: error: {args.config}: invalid JSON ({exc})", file=sys.stderr)
        return 3
    except (PoseLikError, OSError) as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 3
    io_ms = (time.perf_counter() - io_start) * 1000.0

    compute_start = time.perf_counter()
    try:
        outcome = run_simulation(cfg)
    except PoseLikError as exc:
        print(f"{TOOL_NAME}: error: {exc}", file=sys.stderr)
        return 4
    compute_ms = (time.perf_counter() - compute_start) * 1000.0

    _write_json(args.out, outcome.report)
    _write_jsonl(f"{args.out}.selections.jsonl", outcome.selections)
    _write_run_manifest(
        args.out,
        "simulate",
        cfg.to_json_dict(),
        {"config": args.config},
        cfg.seed,
        io_ms,
        compute_ms,
        (time.perf_counter() - started) * 1000.0,
        cfg.unlabeled_size,
    )
    return 0


# --- parser -----------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=TOOL_NAME,
        description="Skeletal-likelihood scoring, refinement and selection.",
    )
    parser.add_argument("--version", action="version", version=f"{TOOL_NAME} {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    score = subs.add_parser("score", help="score heatmap samples or poses")
    score.add_argument("--skeleton", required=True)
    score.add_argument("--params", required=True)
    score.add_argument("--per-image", action="store_true", dest="per_image")
    score.add_argument("--heatmaps", required=True)
    score.add_argument("--mode", choices=("expected", "point"), default="expected")
    score.add_argument("--poses", default=None)
    score.add_argument("--out", required=True)
    score.set_defaults(func=cmd_score)

    refine = subs.add_parser("refine", help="max-likelihood peak selection")
    refine.add_argument("--skeleton", required=True)
    refine.add_argument("--params", required=True)
    refine.add_argument("--heatmaps", required=True)
    refine.add_argument("--out", required=True)
    refine.set_defaults(func=cmd_refine)

    select = subs.add_parser("select", help="bottom-budget sample selection")
    select.add_argument("--scores", required=True)
    select.add_argument("--strategy", choices=("vl4pose", "entropy", "random"), required=True)
    select.add_argument("--budget", type=int, required=True)
    select.add_argument("--seed", type=int, default=0)
    select.add_argument("--out", required=True)
    select.set_defaults(func=cmd_select)

    calibrate = subs.add_parser("calibrate", help="fit link parameters from poses")
    calibrate.add_argument("--skeleton", required=True)
    calibrate.add_argument("--labeled", required=True)
    calibrate.add_argument("--model", choices=("distance", "offset"), required=True)
    calibrate.add_argument("--out", required=True)
    calibrate.set_defaults(func=cmd_calibrate)

    maxima = subs.add_parser("maxima", help="extract heatmap local maxima")
    maxima.add_argument("--heatmaps", required=True)
    maxima.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD_RATIO)
    maxima.add_argument("--max-peaks", type=int, default=DEFAULT_MAX_PEAKS, dest="max_peaks")
    maxima.add_argument("--out", required=True)
    maxima.set_defaults(func=cmd_maxima)

    simulate = subs.add_parser("simulate", help="seeded active-learning simulation")
    simulate.add_argument("--config", required=True)
    simulate.add_argument("--out", required=True)
    simulate.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command == "score" and args.mode == "point" and not args.poses:
        parser.error("--mode point requires --poses")
    threads = _thread_count()
    return args.func(args, threads)


if __name__ == "__main__":
    raise SystemExit(main())
