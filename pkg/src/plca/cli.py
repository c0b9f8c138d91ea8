"""Command-line entry point: ``plca <command> ...`` (or ``python -m plca``)."""

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import aggregation as agg
from . import datagen, gradcheck, ppm, segnet, train
from . import tensor as T
from .association import build_cycle_associations
from .similarity import cosine_entries, normalize_rows


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise SystemExit(f"error: no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise SystemExit(f"error: {path} is not valid JSON ({exc})") from None


def cmd_gen_data(args):
    spec = datagen.BenchmarkSpec.from_dict(_read_json(args.spec)) if args.spec \
        else datagen.BenchmarkSpec()
    result = datagen.write_benchmark(args.out, spec, export_ppm=args.ppm)
    for name, mf in result.items():
        print(f"{name}: {mf['count']} items -> {Path(args.out) / name}")
    return 0


def cmd_train(args):
    cfg = train.TrainConfig.from_dict(_read_json(args.config))
    if args.iters is not None:
        cfg = replace(cfg, max_iters=args.iters)
    every = max(1, cfg.max_iters // 20)

    def progress(rec):
        if rec["iter"] % every == 0 or rec["iter"] == cfg.max_iters - 1:
            print(f"iter {rec['iter']:>5}  full {rec['full']:.4f}  ce {rec['ce']:.4f}  "
                  f"fass {rec['fass']:.4f}  cass {rec['cass']:.4f}  valid {rec['valid_pairs']}",
                  flush=True)

    res = train.train(cfg, args.out, progress=progress)
    print(f"final checkpoint: {res.out_dir / 'final'}")
    if cfg.test_dir and not args.no_eval:
        rep = train.evaluate(res.out_dir / "final", cfg.test_dir)
        print(f"target mIoU {rep.miou * 100:.2f}")
    return 0


def _format_iou(values):
    return " ".join("  -  " if v is None else f"{v:.3f}" for v in values)


def cmd_eval(args):
    ia = False if args.no_aggregate else None
    rep = train.evaluate(args.checkpoint, args.data, inference_aggregation=ia)
    print(f"checkpoint {rep.checkpoint_id}  config {rep.config_hash}")
    print(f"per-class IoU  {_format_iou(rep.per_class_iou)}")
    print(f"mIoU           {rep.miou * 100:.2f}")
    if args.json:
        Path(args.json).write_text(json.dumps(rep.as_dict(), indent=2))
    return 0


def ablation_table(rows, summary):
    """Aligned text table (mean and per-seed mIoU) and the same data as CSV."""
    seeds = sorted({r["seed"] for r in rows})
    header = ["column", "mean mIoU"] + [f"seed {s}" for s in seeds]
    body = []
    for name, (m, _) in summary.items():
        per = {r["seed"]: r["miou"] for r in rows if r["column"] == name}
        body.append([name, f"{m * 100:.2f}"] + [f"{per[s] * 100:.2f}" for s in seeds])
    widths = [max(len(r[k]) for r in [header] + body) for k in range(len(header))]
    lines = ["  ".join(c.ljust(w) if k == 0 else c.rjust(w)
                       for k, (c, w) in enumerate(zip(r, widths))) for r in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["column", "seed", "miou"] + [f"iou_{c}" for c in range(len(rows[0]["per_class_iou"]))])
    for r in rows:
        writer.writerow([r["column"], r["seed"], f"{r['miou']:.6f}"]
                        + ["" if v is None else f"{v:.6f}" for v in r["per_class_iou"]])
    return "\n".join(lines), buf.getvalue()


def cmd_ablate(args):
    base = train.TrainConfig.from_dict(_read_json(args.config))
    if args.iters is not None:
        base = replace(base, max_iters=args.iters)
    names = args.columns.split(",") if args.columns else list(train.ABLATIONS)
    unknown = [n for n in names if n not in train.ABLATIONS]
    if unknown:
        raise SystemExit(f"error: unknown ablation column(s) {unknown}; "
                         f"choose from {list(train.ABLATIONS)}")
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = train.run_ablation(base, args.out, names, seeds, progress=lambda r: print(
        f"  {r['column']} seed {r['seed']}: mIoU {r['miou'] * 100:.2f} ({r['seconds']:.0f}s)",
        flush=True))
    table, text = ablation_table(rows, train.summarize(rows))
    print(table)
    print()
    print(text, end="")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "ablation.csv").write_text(text)
    return 0


def cmd_grad_check(args):
    return gradcheck.grad_check_command(seed=args.seed, include_params=not args.no_params)


def cmd_dump_assoc(args):
    params, manifest = segnet.load_checkpoint(args.checkpoint)
    cfg = train.TrainConfig.from_dict(manifest["config"])
    netc = cfg.net_config()
    src_dir = args.source or cfg.source_dir
    tgt_dir = args.target or cfg.target_dir
    src = datagen.read_dataset(src_dir)
    tgt = datagen.read_dataset(tgt_dir)
    k = args.pair
    if not (0 <= k < len(src) and 0 <= k < len(tgt)):
        raise SystemExit(f"error: pair {k} out of range ({len(src)} source, {len(tgt)} target)")
    with T.no_grad():
        out = segnet.forward(params, np.stack([src[k].image, tgt[k].image]), netc)
    _, c, h, w = out.features.shape
    f = out.features.data.reshape(2, c, h * w)
    y_s = datagen.downsample_labels(src[k].labels, netc.downsample).reshape(-1)
    f_t = f[1]
    if cfg.use_sagg:
        f_t = agg.spatial_aggregate_features(f_t, agg.aggregation_weights(f_t), cfg.alpha).data
    d = cosine_entries(f[0], f_t).data
    assoc = build_cycle_associations(d, d.T, y_s)
    i, j, _ = assoc.valid_triples()

    amap = np.full(h * w, 255)
    amap[j] = y_s[i]  # target pixels reached by a valid cycle, colored by source label
    pixel = args.pixel if args.pixel is not None else (int(i[0]) if len(i) else 0)
    row = normalize_rows(T.Tensor(d[pixel:pixel + 1])).data.reshape(h, w)
    pred = out.probs.data[1].argmax(axis=0)

    dest = Path(args.out or Path(args.checkpoint) / f"assoc_pair{k}")
    dest.mkdir(parents=True, exist_ok=True)
    s = args.scale
    files = {
        "source.ppm": ppm.image_to_rgb(src[k].image),
        "target.ppm": ppm.image_to_rgb(tgt[k].image),
        "source_labels.ppm": ppm.upscale(ppm.labels_to_rgb(y_s.reshape(h, w)), s),
        "association_map.ppm": ppm.upscale(ppm.labels_to_rgb(amap.reshape(h, w)), s),
        f"similarity_row_{pixel}.ppm": ppm.gray_to_rgb(row, s),
        "target_prediction.ppm": ppm.upscale(ppm.labels_to_rgb(pred), s),
    }
    for name, rgb in files.items():
        ppm.write_ppm(dest / name, rgb)
    print(f"pair {k}: {assoc.valid_count}/{len(y_s)} valid cycles, "
          f"target coverage {assoc.target_coverage:.3f}")
    print(f"wrote {len(files)} PPM files to {dest}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="plca", description="Pixel-level cycle association toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic two-domain benchmark")
    p.add_argument("--spec", help="benchmark spec JSON (defaults when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--ppm", type=int, default=4, help="PPM previews per split")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, help="override max_iters")
    p.add_argument("--no-eval", action="store_true", help="skip the final test evaluation")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="mIoU of a checkpoint on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--no-aggregate", action="store_true", help="disable inference aggregation")
    p.add_argument("--json", help="also write the report here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate the ablation columns")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="ablation_runs")
    p.add_argument("--columns", help=f"comma list from {','.join(train.ABLATIONS)}")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--iters", type=int, help="override max_iters")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference audit of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-params", action="store_true", help="skip the network-parameter checks")
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("dump-assoc", help="write PPM views of the associations for one pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pair", type=int, required=True)
    p.add_argument("--source", help="source dataset (default: from the checkpoint config)")
    p.add_argument("--target", help="target dataset (default: from the checkpoint config)")
    p.add_argument("--pixel", type=int, help="source pixel whose similarity row is shown")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_dump_assoc)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, T.TensorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
