"""``srpgan`` command line: train, sr, eval, gradcheck.

Exit codes: 0 ok, 1 usage, 2 data error, 3 divergence / checksum / failed check.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import data, gradcheck, metrics
from .config import Config
from .loss import LossReport
from .model import (Discriminator, DiscriminatorPlan, Generator, GeneratorPlan,
                    build_discriminator, build_generator)
from .optim import AdamState, DivergenceError, train_iteration
from .tensor import RngStream, ShapeError

log = logging.getLogger("srpgan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def threads() -> int:
    try:
        return max(1, int(os.environ.get("SRPGAN_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


# -- checkpoint <-> training state -------------------------------------------

def pack_state(g: Generator, d: Discriminator, sg: Optional[AdamState] = None,
               sd: Optional[AdamState] = None, iteration: int = 0) -> Dict[str, np.ndarray]:
    gp, dp = g.plan, d.plan
    out = {
        "meta.generator": np.array([gp.n_half, gp.base_channels, gp.slope, gp.norm_eps]),
        "meta.discriminator": np.array([dp.n_layers, dp.base_channels, dp.slope, float(dp.conditional)]),
        "meta.iteration": np.array([iteration]),
    }
    out.update(g.state_dict())
    out.update(d.state_dict())
    for tag, st in (("G", sg), ("D", sd)):
        if st is None:
            continue
        out[f"adam.{tag}.t"] = np.array([st.t])
        for k in st.m:
            out[f"adam.{tag}.m.{k}"] = st.m[k]
            out[f"adam.{tag}.v.{k}"] = st.v[k]
    return out


def _f32(v) -> float:
    # meta floats went through float32; snap back to the short decimal
    return float(f"{float(v):.7g}")


def unpack_state(tensors: Dict[str, np.ndarray]):
    """Rebuild ``(g, d, adam_g, adam_d, iteration)`` from checkpoint tensors."""
    try:
        gm, dm = tensors["meta.generator"], tensors["meta.discriminator"]
    except KeyError as e:
        raise ShapeError(f"checkpoint lacks {e.args[0]}") from None
    stream = RngStream(0)
    g = build_generator(GeneratorPlan(n_half=int(gm[0]), base_channels=int(gm[1]),
                                      slope=_f32(gm[2]), norm_eps=_f32(gm[3])), stream)
    d = build_discriminator(DiscriminatorPlan(n_layers=int(dm[0]), base_channels=int(dm[1]),
                                              slope=_f32(dm[2]), conditional=bool(dm[3])), stream)
    g.load_state_dict({k: v for k, v in tensors.items() if k.startswith("G.")})
    d.load_state_dict({k: v for k, v in tensors.items() if k.startswith("D.")})
    states = []
    for tag in ("G", "D"):
        st = AdamState()
        if f"adam.{tag}.t" in tensors:
            st.t = int(tensors[f"adam.{tag}.t"][0])
            pre_m, pre_v = f"adam.{tag}.m.", f"adam.{tag}.v."
            st.m = {k[len(pre_m):]: v.copy() for k, v in tensors.items() if k.startswith(pre_m)}
            st.v = {k[len(pre_v):]: v.copy() for k, v in tensors.items() if k.startswith(pre_v)}
        states.append(st)
    iteration = int(tensors.get("meta.iteration", [0])[0])
    return g, d, states[0], states[1], iteration


def load_generator(path) -> Generator:
    return unpack_state(ckpt.load(path))[0]


# -- inference helpers ---------------------------------------------------------

def run_generator(g: Generator, img: data.ImagePlane) -> data.ImagePlane:
    """Apply G to an already-upscaled image of any size (replicate-padded to fit)."""
    m = 2 ** g.plan.n_half
    x = data.to_tensor(img)
    h, w = x.shape[2:]
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    out = g.forward(x)[:, :, :h, :w]
    return data.from_tensor(out)


# -- commands -------------------------------------------------------------------

def fixed_pool(config: Config, images, stream: RngStream = None):
    """The (z, y) batch of ``config.fixed_patches`` patches that overfit runs cycle through."""
    if stream is None:
        stream = RngStream(config.seed).spawn(1)
    pool = data.sample_patches(images, stream, config.fixed_patches, config.patch_size)
    return data.make_batch(pool, config.scale)


def cmd_train(config: Config) -> Path:
    config.validate()
    run = Path(config.out)
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.txt").write_text(config.dumps())
    if not config.data:
        raise data.DataError("no training data given (--data)")
    images = [data.load_image(p) for p in data.read_manifest(config.data)]

    root = RngStream(config.seed)
    init_stream, data_stream = root.spawn(0), root.spawn(1)
    g = build_generator(config.generator_plan(), init_stream)
    d = build_discriminator(config.discriminator_plan(), init_stream)
    sg, sd = AdamState(), AdamState()
    weights, sched = config.loss_weights(), config.schedule()

    fixed = fixed_pool(config, images, data_stream) if config.fixed_patches else None

    def next_batch(t):
        if fixed is not None:
            n = fixed[0].shape[0]
            idx = [(t * config.batch + k) % n for k in range(config.batch)]
            return fixed[0][idx], fixed[1][idx]
        patches = data.sample_patches(images, data_stream, config.batch, config.patch_size)
        if config.augment:
            patches = [data.augment(p, data_stream) for p in patches]
        return data.make_batch(patches, config.scale)

    with open(run / "loss.csv", "w") as fh:
        fh.write(LossReport.CSV_HEADER + "\n")
        for t in range(config.iters):
            z, y = next_batch(t)
            try:
                report = train_iteration(z, y, g, d, weights, sg, sd, sched, t)
            except DivergenceError:
                ckpt.save(run / "diverged.srpg", pack_state(g, d, sg, sd, t))
                raise
            fh.write(report.csv_row(t) + "\n")
            fh.flush()
            if t % 50 == 0:
                log.info("iter %d  l_g=%.5f l_d=%.5f l_y=%.5f", t, report.l_g, report.l_d, report.l_y)
            if config.checkpoint_every and (t + 1) % config.checkpoint_every == 0:
                ckpt.save(run / f"ckpt_{t + 1:07d}.srpg", pack_state(g, d, sg, sd, t + 1))
    ckpt.save(run / "final.srpg", pack_state(g, d, sg, sd, config.iters))
    return run


def cmd_sr(checkpoint, input_path, scale: int, output_path) -> data.ImagePlane:
    g = load_generator(checkpoint)
    lr = data.load_image(input_path)
    up = data.resample_bicubic(lr, lr.width * scale, lr.height * scale)
    out = run_generator(g, up)
    data.save_image(out, output_path)
    return out


def _triptych(a: data.ImagePlane, b: data.ImagePlane, c: data.ImagePlane) -> data.ImagePlane:
    return data.ImagePlane(np.concatenate([a.samples, b.samples, c.samples], axis=1))


def cmd_eval(source: str, dataset, scale: int, protocol: metrics.EvalProtocol = None,
             csv_path=None, triptych_dir=None) -> List[tuple]:
    """Benchmark ``source`` ("bicubic", "truth", or a checkpoint path) on a folder of HR images.

    Returns rows ``(image, psnr_db, ssim)`` with a final ``("mean", ...)`` row.
    """
    protocol = protocol or metrics.EvalProtocol(shave=scale)
    paths = data.list_images(dataset)
    if not paths:
        raise data.DataError(f"no images in {dataset}")
    g = None if source in ("bicubic", "truth") else load_generator(source)
    if triptych_dir:
        Path(triptych_dir).mkdir(parents=True, exist_ok=True)

    def one(path):
        hr = data.crop_to_multiple(data.load_image(path), scale)
        z = data.bicubic_degrade(hr, scale)
        if source == "truth":
            out = hr
        elif g is None:
            out = z
        else:
            out = run_generator(g, z)
        if triptych_dir:
            data.save_image(_triptych(z, out, hr), Path(triptych_dir) / f"{path.stem}.png")
        p, s = metrics.evaluate_pair(out, hr, protocol)
        return path.name, p, s

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        rows = list(pool.map(one, paths))
    rows.append(("mean", float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows]))))
    if csv_path:
        with open(csv_path, "w") as fh:
            fh.write("image,psnr_db,ssim\n")
            for name, p, s in rows:
                fh.write(f"{name},{'inf' if math.isinf(p) else f'{p:.4f}'},{s:.6f}\n")
    return rows


def cmd_gradcheck(seed: int = 0) -> List[gradcheck.CheckResult]:
    return gradcheck.run_all(seed)


# -- argument parsing -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="srpgan", description="Perceptual GAN single-image super-resolution")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train G and D")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--desk", action="store_true", help="desk-scale preset (small model, 64px patches)")
    t.add_argument("--scale", type=int, choices=(2, 4, 8))
    t.add_argument("--seed", type=int)
    t.add_argument("--data", help="manifest file or image directory")
    t.add_argument("--out", help="run directory")
    t.add_argument("--iters", type=int)
    t.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")

    s = sub.add_parser("sr", help="super-resolve one image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--scale", type=int, choices=(2, 4, 8), default=4)

    e = sub.add_parser("eval", help="PSNR/SSIM on a folder of HR images")
    e.add_argument("--checkpoint", default="bicubic", help='checkpoint path, "bicubic" or "truth"')
    e.add_argument("--data", required=True, help="directory of HR images")
    e.add_argument("--scale", type=int, choices=(2, 4, 8), default=4)
    e.add_argument("--channel", choices=("y", "rgb"), default="y")
    e.add_argument("--shave", type=int, help="border pixels to ignore (default: scale)")
    e.add_argument("--out", help="CSV report path")
    e.add_argument("--triptych", help="directory for input/output/truth PNGs")

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    return p


def resolve_config(args) -> Config:
    cfg = Config()
    if args.desk:
        cfg = cfg.replace(**cfgmod.DESK_PRESET)
    if args.config:
        cfg = cfgmod.load(args.config, cfg)
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg = cfg.replace(**{k.strip(): cfgmod.parse_value(k.strip(), v)})
    for key in ("scale", "seed", "data", "out", "iters", "checkpoint_every"):
        val = getattr(args, key)
        if val is not None:
            cfg = cfg.replace(**{key: val})
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(threads())
    except ImportError:  # pragma: no cover
        pass
    try:
        if args.command == "train":
            run = cmd_train(resolve_config(args))
            print(run)
        elif args.command == "sr":
            cmd_sr(args.checkpoint, args.input, args.scale, args.output)
        elif args.command == "eval":
            shave = args.scale if args.shave is None else args.shave
            rows = cmd_eval(args.checkpoint, args.data, args.scale,
                            metrics.EvalProtocol(args.channel, shave), args.out, args.triptych)
            print("image,psnr_db,ssim")
            for name, p, s in rows:
                print(f"{name},{p:.4f},{s:.6f}")
        elif args.command == "gradcheck":
            results = cmd_gradcheck(args.seed)
            print(gradcheck.format_table(results))
            if not all(r.passed for r in results):
                return EXIT_NUMERIC
    except ShapeError as e:
        print(f"srpgan: {e}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, KeyError, ValueError) as e:
        print(f"srpgan: {e}", file=sys.stderr)
        return EXIT_USAGE
    except data.DataError as e:
        print(f"srpgan: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, ckpt.CheckpointError) as e:
        print(f"srpgan: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
