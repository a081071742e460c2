"""Command-line entry point: ``diffattn <command> [flags]``.

Exit codes: 0 success, 1 validation error (bad flags, malformed input
files, inconsistent arguments), 2 internal error.  ``--json`` prints one
JSON object (sorted keys) on stdout; otherwise a short human-readable
table.  ``DIFFATTN_THREADS`` caps evaluation parallelism (default 1).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import traceback

import numpy as np

from . import container
from .attention import attention_forward
from .container import ContainerError, RecordType
from .data import GenConfig, generate, split
from .export import tile_maps, write_history_csv, write_maps_csv, write_pgm
from .exemplars import IndexError_
from .gradcheck import grad_check
from .metrics import rank_correlation_rows
from .model import MODEL_NAMES, Batch, ModelSpec, predict
from .trainer import TrainConfig, TrainingDiverged, build_exemplar_index, evaluate, train

__all__ = ["run", "main", "UsageError"]


class UsageError(ValueError):
    """Invalid command line or arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); validation errors are 1 here
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _threads() -> int:
    raw = os.environ.get("DIFFATTN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"DIFFATTN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"DIFFATTN_THREADS must be a positive integer, got {raw!r}")
    return n


def _model_code(name: str) -> int:
    return MODEL_NAMES.index(name)


def _load_params(path):
    params, code = container.load(path, RecordType.PARAMS)
    return params, (MODEL_NAMES[code] if 0 <= code < len(MODEL_NAMES) else None)


def _emit(args, summary: dict, rows: list[tuple[str, object]]) -> None:
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        width = max(len(k) for k, _ in rows) if rows else 0
        for k, v in rows:
            if isinstance(v, float):
                v = f"{v:.6g}"
            print(f"{k:<{width}}  {v}")


# -- commands -------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = GenConfig(
        n_items=args.n, R=args.regions, D=args.dim, C=args.classes, noise_sigma=args.noise, corruption=args.corruption, seed=args.seed
    )
    ds = generate(cfg)
    out = {"items": len(ds), "regions": ds.R, "dim": ds.D, "classes": ds.n_classes, "seed": args.seed, "out": args.out}
    if args.test_out:
        tr, te = split(ds, args.test_fraction, args.seed)
        container.save(tr, args.out)
        container.save(te, args.test_out)
        out.update(train_items=len(tr), test_items=len(te), test_out=args.test_out)
    else:
        container.save(ds, args.out)
    _emit(args, out, list(out.items()))
    return 0


def cmd_build_index(args) -> int:
    ds = container.load(args.data, RecordType.DATASET)
    ix = build_exemplar_index(ds, args.clusters, args.seed)
    container.save(ix, args.out)
    out = {"points": ix.n, "clusters": ix.clusters.n_clusters, "nodes": int(ix.kd.left.shape[0]), "out": args.out}
    _emit(args, out, list(out.items()))
    return 0


def _index_for(args, ds):
    if getattr(args, "index", None):
        return container.load(args.index, RecordType.INDEX)
    return None


def cmd_train(args) -> int:
    ds = container.load(args.data, RecordType.DATASET)
    cfg = TrainConfig(
        model=args.model,
        epochs=args.epochs,
        batch=args.batch,
        lr_cls=args.lr,
        nu=args.nu,
        k_exemplars=args.k,
        hidden=args.hidden,
        n_clusters=args.clusters,
        exemplars=args.exemplars,
        seed=args.seed,
    )
    params, history = train(ds, cfg, _index_for(args, ds))
    container.save(params, args.out, model_code=_model_code(args.model))
    if args.history:
        write_history_csv(args.history, history)
    last = history[-1] if history else {"loss": float("nan"), "acc": float("nan"), "rankcorr": float("nan")}
    out = {"model": args.model, "epochs": args.epochs, "loss": last["loss"], "train_acc": last["acc"], "train_rankcorr": last["rankcorr"], "out": args.out}
    _emit(args, out, list(out.items()))
    return 0


def _resolve_model(args, stored):
    model = args.model or stored
    if model is None:
        raise UsageError("parameter file carries no model name; pass --model")
    if stored is not None and model != stored:
        raise UsageError(f"--model {model} does not match the parameter file ({stored})")
    return model


def cmd_eval(args) -> int:
    ds = container.load(args.data, RecordType.DATASET)
    params, stored = _load_params(args.params)
    model = _resolve_model(args, stored)
    ref = container.load(args.reference, RecordType.DATASET) if args.reference else None
    if ModelSpec.from_name(model).kind == "dcn" and ref is None:
        raise UsageError("DCN evaluation needs --reference (the training dataset exemplars come from)")
    index = _index_for(args, ref)
    ev = evaluate(ds, params, model, index=index, reference_ds=ref, k_exemplars=args.k, seed=args.seed, threads=_threads())
    if args.maps_out:
        container.save(ev["maps"], args.maps_out)
    out = {"model": model, "items": len(ds), "accuracy": ev["accuracy"], "rank_correlation": ev["rank_correlation"]}
    _emit(args, out, list(out.items()))
    return 0


def cmd_rank_corr(args) -> int:
    a = container.load(args.a, RecordType.MAPS)
    b = container.load(args.b, RecordType.MAPS)
    if a.shape != b.shape:
        raise UsageError(f"map files differ in shape: {a.shape} vs {b.shape}")
    rc = rank_correlation_rows(a, b)
    out = {"maps": int(a.shape[0]), "mean": float(rc.mean()), "per_map": [float(v) for v in rc]}
    _emit(args, out, [("maps", out["maps"]), ("rank_correlation", out["mean"])])
    return 0


def cmd_grad_check(args) -> int:
    res = grad_check(args.model, args.samples, args.seed)
    blocks = {}
    for r in res:
        for k, v in r.errors.items():
            blocks[k] = max(blocks.get(k, 0.0), v)
    ok = all(v <= args.tol for v in blocks.values())
    out = {"model": args.model, "samples": args.samples, "tol": args.tol, "max_rel_error": blocks, "passed": ok}
    rows = [(f"{k}", v) for k, v in blocks.items()] + [("passed", ok)]
    _emit(args, out, rows)
    return 0 if ok else 1


def cmd_dump_attention(args) -> int:
    ds = container.load(args.data, RecordType.DATASET)
    params, stored = _load_params(args.params)
    model = _resolve_model(args, stored)
    spec = ModelSpec.from_name(model)
    if not 0 <= args.item < len(ds):
        raise UsageError(f"--item {args.item} out of range for {len(ds)} items")
    index = _index_for(args, ds) or build_exemplar_index(ds, args.clusters, args.seed)
    if index.n != len(ds):
        raise UsageError("--index was not built over --data")
    item_id = int(ds.ids[args.item])
    ex = index.sets_for_members([item_id], 1, offset=args.offset, seed=args.seed)[0]
    sup_row, opp_row = ds.row_of_ids([ex.supports[0], ex.opposes[0]])
    g = ds.features[[args.item, sup_row, opp_row]]
    f = np.repeat(ds.questions[[args.item]], 3, axis=0)
    s_all, _ = attention_forward(g, f, params)
    batch = Batch(g[:1], f[:1], ds.answers[[args.item]])
    if spec.kind == "dcn":
        batch.g_sup, batch.g_opp = g[None, 1:2], g[None, 2:3]
    else:
        spec = ModelSpec("baseline")  # DAN attends with its plain map at inference
    final = predict(batch, params, spec).maps[0]
    maps = np.vstack([s_all, final[None]])
    labels = ["target", "support", "oppose", "final"]
    write_pgm(args.out_prefix + ".pgm", tile_maps(maps, scale=args.scale))
    write_maps_csv(args.out_prefix + ".csv", maps, labels)
    out = {
        "model": model,
        "item": item_id,
        "support": int(ex.supports[0]),
        "oppose": int(ex.opposes[0]),
        "pgm": args.out_prefix + ".pgm",
        "csv": args.out_prefix + ".csv",
    }
    _emit(args, out, list(out.items()))
    return 0


def cmd_knn(args) -> int:
    ix = container.load(args.index, RecordType.INDEX)
    if args.k < 1 or args.k >= ix.n:
        raise UsageError(f"--k must be in 1..{ix.n - 1}")
    ids = ix.neighbours(args.id, args.k)
    q = ix.kd.embedding(args.id)
    d = [float(np.sum((ix.kd.embedding(int(i)) - q) ** 2)) for i in ids]
    out = {"id": args.id, "k": args.k, "neighbours": [int(i) for i in ids], "sq_distances": d}
    _emit(args, out, [("id", args.id)] + [(f"#{j + 1}", f"{int(i)}  d2={dd:.6g}") for j, (i, dd) in enumerate(zip(ids, d))])
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diffattn", description="Exemplar-guided attention for VQA-style data.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--json", action="store_true", help="print a JSON summary")
        return sp

    sp = common(sub.add_parser("gen-data", help="generate a synthetic dataset"))
    sp.add_argument("--n", type=int, default=2000)
    sp.add_argument("--regions", type=int, default=16)
    sp.add_argument("--dim", type=int, default=32)
    sp.add_argument("--classes", type=int, default=8)
    sp.add_argument("--noise", type=float, default=0.3)
    sp.add_argument("--corruption", type=float, default=0.1)
    sp.add_argument("--out", required=True)
    sp.add_argument("--test-out", help="also split off a test set and write it here")
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.set_defaults(func=cmd_gen_data)

    sp = common(sub.add_parser("build-index", help="build the exemplar index over a dataset"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--clusters", type=int, default=50)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_build_index)

    sp = common(sub.add_parser("train", help="train a model"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--index")
    sp.add_argument("--model", choices=MODEL_NAMES, default="dan")
    sp.add_argument("--epochs", type=int, default=20)
    sp.add_argument("--batch", type=int, default=50)
    sp.add_argument("--lr", type=float, default=0.005)
    sp.add_argument("--nu", type=float, default=0.1)
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--hidden", type=int, default=64)
    sp.add_argument("--clusters", type=int, default=50)
    sp.add_argument("--exemplars", choices=("retrieved", "random"), default="retrieved")
    sp.add_argument("--out", required=True)
    sp.add_argument("--history", help="write per-epoch history CSV here")
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("eval", help="evaluate accuracy and rank correlation"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--params", required=True)
    sp.add_argument("--model", choices=MODEL_NAMES)
    sp.add_argument("--reference", help="training dataset (exemplar source for DCN)")
    sp.add_argument("--index", help="index built over --reference")
    sp.add_argument("--k", type=int, default=4)
    sp.add_argument("--maps-out", help="write the evaluated maps here")
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("rank-corr", help="rank correlation between two map files"))
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.set_defaults(func=cmd_rank_corr)

    sp = common(sub.add_parser("grad-check", help="finite-difference gradient check"))
    sp.add_argument("--model", choices=MODEL_NAMES, required=True)
    sp.add_argument("--samples", type=int, default=5)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_grad_check)

    sp = common(sub.add_parser("dump-attention", help="write target/support/oppose/final maps as PGM + CSV"))
    sp.add_argument("--data", required=True)
    sp.add_argument("--params", required=True)
    sp.add_argument("--model", choices=MODEL_NAMES)
    sp.add_argument("--index")
    sp.add_argument("--clusters", type=int, default=50)
    sp.add_argument("--item", type=int, default=0, help="row of the item in --data")
    sp.add_argument("--offset", type=int, default=20)
    sp.add_argument("--scale", type=int, default=8)
    sp.add_argument("--out-prefix", required=True)
    sp.set_defaults(func=cmd_dump_attention)

    sp = common(sub.add_parser("knn", help="nearest neighbours of an item in an index"))
    sp.add_argument("--index", required=True)
    sp.add_argument("--id", type=int, required=True)
    sp.add_argument("--k", type=int, default=5)
    sp.set_defaults(func=cmd_knn)
    return p


def run(argv=None) -> int:
    """Run one command; returns the exit code instead of exiting."""
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (ContainerError, IndexError_, ValueError, OSError, KeyError, TrainingDiverged) as e:
        print(f"diffattn: error: {e}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001 - anything else is a bug
        traceback.print_exc()
        return 2


def main() -> None:
    sys.exit(run())
