"""Command-line pipeline: slice -> gen -> rebuild -> attack -> report.

Exit codes: 0 success, 1 parse/format error, 2 analysis error (no
criteria, unsatisfiable order, irreducible flow), 3 model-rebuild error,
4 runtime/attack error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .basis import build_basis
from .codegen import UnsatisfiableOrder, emit_program, format_pprog
from .criteria import NoCriterionFound, SignatureError, find_criteria, parse_signatures
from .dataset import DatasetError, load_dataset
from .interp import PprogError, parse_pprog
from .mir.eval import EvalError
from .mir.parser import MirParseError, parse_mir
from .modelio import ModelIoError, generate_model, load_model
from .rebuild import (
    CycleDetected,
    InconsistentShapes,
    NonIntegerMultiplier,
    UnknownLayout,
    UnknownOpcode,
    rebuild_model,
)
from .robustness import (
    AttackConfig,
    EmptyDataset,
    EmptyDetections,
    ImageTooSmall,
    ProcessingHarness,
    TaskSpec,
    aggregate_outcomes,
    decode_argmax,
    decode_boxes,
    decode_pixel_labels,
    evaluate_sample,
    format_report,
)
from .runtime.ops import ShapeMismatch, UnsupportedOp
from .runtime.session import NoForwardPass, Session
from .simfmt import SimFormatError, load_sim
from .slicer import extract_processing, format_label_list, format_slice_report
from .structure import IrreducibleControlFlow

EXIT_PARSE = 1
EXIT_ANALYSIS = 2
EXIT_REBUILD = 3
EXIT_RUNTIME = 4

_PARSE_ERRORS = (MirParseError, SimFormatError, PprogError, DatasetError,
                 SignatureError, ModelIoError, json.JSONDecodeError)
_ANALYSIS_ERRORS = (NoCriterionFound, UnsatisfiableOrder, IrreducibleControlFlow)
_REBUILD_ERRORS = (UnknownOpcode, CycleDetected, InconsistentShapes,
                   NonIntegerMultiplier, UnknownLayout)
_RUNTIME_ERRORS = (EvalError, ShapeMismatch, UnsupportedOp, NoForwardPass,
                   EmptyDataset, EmptyDetections, ImageTooSmall)


def _classify(exc: BaseException) -> int:
    if isinstance(exc, _ANALYSIS_ERRORS):
        return EXIT_ANALYSIS
    if isinstance(exc, _REBUILD_ERRORS):
        return EXIT_REBUILD
    if isinstance(exc, _RUNTIME_ERRORS):
        return EXIT_RUNTIME
    if isinstance(exc, _PARSE_ERRORS):
        return EXIT_PARSE
    raise exc


def cmd_slice(mir_path: str, signatures_path: str, out_dir: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    program = parse_mir(Path(mir_path).read_text())
    sigs = parse_signatures(Path(signatures_path).read_text())
    basis = build_basis(program)
    criteria = find_criteria(program, sigs)
    slices = extract_processing(basis, criteria)
    report = out / "slices.rpt"
    labels = out / "slices.labels"
    report.write_text(format_slice_report(slices))
    labels.write_text(format_label_list(slices))
    return [report, labels]


def cmd_gen(mir_path: str, slices_path: str, out_dir: str) -> list[Path]:
    from .basis import QLabel
    from .criteria import SlicingCriterion
    from .slicer import ProcessingSlice, SliceSet, parse_slice_report

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    program = parse_mir(Path(mir_path).read_text())
    triples = parse_slice_report(Path(slices_path).read_text())
    slices = []
    for crit, pre, post in triples:
        b = SlicingCriterion(crit, frozenset(), "backward")
        f = SlicingCriterion(crit, frozenset(), "forward")
        slices.append(ProcessingSlice(SliceSet(pre, b), SliceSet(post, f), crit))
    pprog = emit_program(program, slices)
    path = out / "processing.pprog"
    path.write_text(format_pprog(pprog))
    return [path]


def cmd_rebuild(sim_path: str, out_dir: str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sg = load_sim(sim_path)
    graph = rebuild_model(sg)
    script, weights = generate_model(graph)
    mbuild = out / "model.mbuild"
    wts = out / "model.weights"
    mbuild.write_text(script)
    wts.write_bytes(weights)
    return [mbuild, wts]


def _one_hot(truth: str, shape) -> np.ndarray:
    label = int(truth.split()[0])
    out = np.zeros(shape, dtype=np.float64)
    out.reshape(-1)[label] = 1.0
    return out


def _task_spec(task_type: str) -> TaskSpec:
    if task_type == "t1":
        return TaskSpec("t1", decode_argmax, _one_hot)
    if task_type == "t2":
        return TaskSpec("t2", decode_boxes, None)
    if task_type == "t3":
        return TaskSpec("t3", decode_pixel_labels, None)
    return TaskSpec("t4", lambda out: np.asarray(out), None)


def cmd_attack(
    model_path: str,
    dataset_path: str,
    out_dir: str,
    task_type: str = "t1",
    pprog_path: str | None = None,
    epsilon: float = 8.0,
    alpha: float = 2.0,
    iters: int = 10,
    input_scale: float = 1.0 / 255.0,
    threshold: float = 0.6,
    seed: int = 0,
    jobs: int = 1,
    report_name: str = "report.rreport",
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    script = Path(model_path).read_text()
    weights = Path(model_path).with_suffix(".weights").read_bytes()
    dataset = load_dataset(dataset_path)
    cfg = AttackConfig(epsilon=epsilon, alpha=alpha, iterations=iters,
                       input_scale=input_scale, threshold=threshold, seed=seed)
    task = _task_spec(task_type)

    model_input_fn = None
    decode_fn = None
    harness = None
    if pprog_path:
        pprog = parse_pprog(Path(pprog_path).read_text())
        harness = _make_harness(pprog)

    def session_factory() -> Session:
        return Session(load_model(script, weights))

    def run_one(sample, session: Session):
        if harness is not None:
            mfn = lambda s: harness.model_input(session, _raw_value(s))
            dfn = lambda s, out_: _harness_decode(harness, s, out_, task)
        else:
            mfn, dfn = model_input_fn, decode_fn
        return evaluate_sample(session, sample, task, cfg, mfn, dfn)

    if jobs > 1:
        def worker(sample):
            return run_one(sample, session_factory())

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(worker, dataset))
    else:
        session = session_factory()
        outcomes = [run_one(s, session) for s in dataset]

    report = aggregate_outcomes(task, outcomes, cfg)
    path = out / report_name
    path.write_text(format_report(report, tool_version=__version__))
    verdict = "FLAGGED" if report.flagged else "not flagged"
    print(f"aggregate {report.aggregate:.4f} -> {verdict} "
          f"(threshold {threshold}, strict)")
    return [path]


def _raw_value(sample):
    return [int(v) for v in np.asarray(sample.image).reshape(-1)]


def _make_harness(pprog) -> ProcessingHarness:
    input_names = set(pprog.inputs)
    output_names = set(pprog.outputs)
    others = [name for name, _ in pprog.externs
              if name not in input_names and name not in output_names]
    if len(others) != 1:
        raise PprogError(
            f"cannot identify the inference primitive among {others!r}")
    if len(pprog.inputs) != 1:
        raise PprogError("processing program must declare exactly one input")
    return ProcessingHarness(pprog, others[0], pprog.inputs[0])


def _harness_decode(harness: ProcessingHarness, sample, model_output, task: TaskSpec):
    result = harness.decode(_raw_value(sample), model_output)
    values = []
    for name in harness.program.outputs:
        for args in result.outputs.get(name, []):
            values.extend(args)
    if task.task_type == "t1":
        if len(values) != 1:
            raise EvalError("type-1 post-processing must emit exactly one label")
        return int(values[0])
    return values


def cmd_pipeline(config_path: str) -> list[Path]:
    cfg = json.loads(Path(config_path).read_text())
    out_dir = cfg["out"]
    artifacts: list[Path] = []
    artifacts += cmd_slice(cfg["mir"], cfg["signatures"], out_dir)
    artifacts += cmd_gen(cfg["mir"], str(Path(out_dir) / "slices.rpt"), out_dir)
    artifacts += cmd_rebuild(cfg["sim"], out_dir)
    artifacts += cmd_attack(
        str(Path(out_dir) / "model.mbuild"),
        cfg["dataset"],
        out_dir,
        task_type=cfg.get("task", "t1"),
        pprog_path=str(Path(out_dir) / "processing.pprog"),
        epsilon=float(cfg.get("epsilon", 8.0)),
        alpha=float(cfg.get("alpha", 2.0)),
        iters=int(cfg.get("iters", 10)),
        input_scale=float(cfg.get("input_scale", 1.0 / 255.0)),
        threshold=float(cfg.get("threshold", 0.6)),
        seed=int(cfg.get("seed", 0)),
        jobs=int(cfg.get("jobs", 1)),
    )
    manifest = Path(out_dir) / "MANIFEST"
    import hashlib

    lines = []
    for p in sorted(artifacts):
        digest = hashlib.sha256(p.read_bytes()).hexdigest()
        lines.append(f"{digest}  {p.name}")
    manifest.write_text("\n".join(lines) + "\n")
    artifacts.append(manifest)
    return artifacts


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reprobe", description=__doc__)
    ap.add_argument("--version", action="version", version=f"reprobe {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("slice", help="slice processing code out of a MIR program")
    p.add_argument("--mir", required=True)
    p.add_argument("--signatures", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen", help="emit a runnable processing program from a slice report")
    p.add_argument("--mir", required=True)
    p.add_argument("--slices", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rebuild", help="rebuild a BP-enabled model from a SIM file")
    p.add_argument("--sim", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("attack", help="assess a rebuilt model's robustness with PGD")
    p.add_argument("--model", required=True, help="MBUILD script (weights beside it)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--pprog", default=None, help="processing program wrapping the model")
    p.add_argument("--task", choices=["t1", "t2", "t3", "t4"], default="t1")
    p.add_argument("--epsilon", type=float, default=8.0)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--input-scale", type=float, default=1.0 / 255.0)
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pipeline", help="run slice/gen/rebuild/attack from a config file")
    p.add_argument("--config", required=True)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "slice":
            paths = cmd_slice(args.mir, args.signatures, args.out)
        elif args.command == "gen":
            paths = cmd_gen(args.mir, args.slices, args.out)
        elif args.command == "rebuild":
            paths = cmd_rebuild(args.sim, args.out)
        elif args.command == "attack":
            paths = cmd_attack(
                args.model, args.dataset, args.out,
                task_type=args.task, pprog_path=args.pprog,
                epsilon=args.epsilon, alpha=args.alpha, iters=args.iters,
                input_scale=args.input_scale, threshold=args.threshold,
                seed=args.seed, jobs=args.jobs)
        else:
            paths = cmd_pipeline(args.config)
    except Exception as exc:  # noqa: BLE001 - classified into exit codes
        code = _classify(exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
