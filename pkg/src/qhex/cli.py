"""``qhex`` command-line pipeline.

Exit codes: 0 success, 2 usage, 3 I/O, 4 validation, 5 training divergence.
Failures print one line to stderr::

    qhex: error: code=<n> kind=<usage|io|validation|diverged> msg=<json string>
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import dataset, dti, formats, hemihex, mlp, phantom, scheme, upsample

EXIT_USAGE, EXIT_IO, EXIT_VALIDATION, EXIT_DIVERGED = 2, 3, 4, 5
_KINDS = {EXIT_USAGE: "usage", EXIT_IO: "io", EXIT_VALIDATION: "validation", EXIT_DIVERGED: "diverged"}

log = logging.getLogger("qhex")


class CLIError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(EXIT_USAGE, f"{self.prog}: {message}")


def _need(*paths):
    for p in paths:
        if p is not None and not os.path.exists(p):
            raise CLIError(EXIT_IO, f"missing input file: {p}")


def _need_dvol(*paths):
    for p in paths:
        if p is not None and not formats.dvol_exists(p):
            raise CLIError(EXIT_IO, f"missing dvol volume: {formats.dvol_prefix(p)}.dvol.{{json,raw}}")


def _load_config(path):
    if path is None:
        return {}
    _need(path)
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CLIError(EXIT_VALIDATION, f"{path}: invalid JSON config ({exc})") from None
    if not isinstance(cfg, dict):
        raise CLIError(EXIT_VALIDATION, f"{path}: config must be a JSON object")
    return cfg


def _pick(flag, section, key, default):
    if flag is not None:
        return flag
    return section.get(key, default)


def _load_mask(path, volume):
    if path is None:
        return dataset.interior_mask(volume)
    _need_dvol(path)
    data, _ = formats.read_array(path)
    if data.shape[:3] != volume.spatial_shape:
        raise ValueError(f"mask dims {list(data.shape[:3])} do not match volume {list(volume.spatial_shape)}")
    return data[..., 0] != 0


def cmd_gen_scheme(args):
    s = scheme.build_nested(args.n_lar, args.n_har, args.pool, args.seed)
    scheme.save_scheme(s, args.out)
    if args.neighborhoods:
        nbhds = hemihex.decompose(s)
        formats._write_atomic(args.neighborhoods, hemihex.format_neighborhoods(nbhds).encode("utf-8"))
    info = scheme.scheme_summary(s)
    print(f"min_angle_lar {info['min_angle_lar']:.6f} rad")
    print(f"min_angle_har {info['min_angle_har']:.6f} rad")
    print(f"directions lar={info['n_lar']} har={info['n_har']} unknown={info['n_unknown']}")


def cmd_make_phantom(args):
    _need(args.scheme)
    cfg = _load_config(args.config).get("phantom", {})
    s = scheme.load_scheme(args.scheme)
    kind = _pick(args.kind, cfg, "kind", "mixed")
    dims = tuple(_pick(args.dims, cfg, "dims", list(phantom.DEFAULT_DIMS)))
    seed = int(_pick(args.seed, cfg, "seed", 0))
    sigma = float(_pick(args.noise_sigma, cfg, "noise_sigma", 0.0))
    S0 = float(cfg.get("S0", 1.0))
    spec = phantom.desk_phantom(kind, dims=dims, seed=seed, S0=S0, noise_sigma=sigma * S0)
    har, lar = phantom.make_phantom(spec, s)
    formats.write_volume(args.out_har, har, args.scheme)
    formats.write_volume(args.out_lar, lar, args.scheme)
    print(f"phantom kind={kind} dims={list(dims)} channels har={har.dims[3]} lar={lar.dims[3]} seed={seed}")


def cmd_build_dataset(args):
    _need(args.scheme)
    s = scheme.load_scheme(args.scheme)
    nbhds = hemihex.decompose(s)
    parts = []
    for k, (lar_path, har_path) in enumerate(args.pair):
        _need_dvol(lar_path, har_path)
        lar = formats.read_volume(lar_path, s)
        har = formats.read_volume(har_path, s)
        mask = _load_mask(args.mask, lar)
        parts.append(dataset.extract_samples(lar, har, s, nbhds, mask, provenance=k))
    samples = dataset.Samples.concatenate(parts)
    split = dataset.split_by_region(samples, val_fraction_regions=args.val_fraction)
    dataset.save_samples(split.train, args.out + ".train.qhxd")
    dataset.save_samples(split.val, args.out + ".val.qhxd")
    print(f"samples train={len(split.train)} val={len(split.val)} "
          f"train_instances={list(map(int, split.train_labels))} val_instances={list(map(int, split.val_labels))}")


def _train_config(cfg, args):
    tc = dict(cfg.get("train", {}))
    if args.seed is not None:
        tc["seed"] = args.seed
    if args.epochs is not None:
        phases = tc.get("phases") or [vars(p) for p in mlp.default_phases()]
        tc["phases"] = [dict(p, epochs=args.epochs) for p in phases]
    try:
        return mlp.TrainConfig(**tc)
    except TypeError as exc:
        raise CLIError(EXIT_VALIDATION, f"bad train config: {exc}") from None


def cmd_train(args):
    _need(args.train, args.val)
    cfg = _train_config(_load_config(args.config), args)
    train = dataset.load_samples(args.train)
    val = dataset.load_samples(args.val) if args.val else None
    split = dataset.DataSplit(train, val, [], [])
    p0 = mlp.init_params(cfg.layer_dims, cfg.seed)
    p, tlog = mlp.train(p0, split, cfg)
    mlp.save_model(p, args.out)
    tlog.save(args.log)
    last = tlog.records[-1]
    print(f"iterations {len(tlog)} final train_rmse {last[4]:.6e} val_rmse {last[6]:.6e}")


def cmd_upsample(args):
    _need(args.scheme, args.model)
    _need_dvol(args.lar)
    s = scheme.load_scheme(args.scheme)
    nbhds = hemihex.decompose(s)
    lar = formats.read_volume(args.lar, s)
    mask = _load_mask(args.mask, lar)
    if args.baseline:
        out = upsample.predict_volume_baseline(lar, s, nbhds, mask)
    else:
        out = upsample.predict_volume(lar, mlp.load_model(args.model), s, nbhds, mask)
    formats.write_volume(args.out, out, args.scheme)
    print(f"coverage {upsample.coverage(mask):.6f} unmasked_voxels {int((~mask).sum())}")


def cmd_fit_dti(args):
    _need_dvol(args.vol)
    header = formats.read_header(args.vol)
    scheme_file = args.scheme or formats.scheme_path_of(args.vol, header)
    if scheme_file is None:
        raise CLIError(EXIT_VALIDATION, f"{args.vol}: no scheme recorded; pass --scheme")
    _need(scheme_file)
    s = scheme.load_scheme(scheme_file)
    vol = formats.read_volume(args.vol, s)
    mask = _load_mask(args.mask, vol)
    tf = dti.fit_dti(vol, mask, name=scheme_file)
    fa_map = np.where(mask, tf.fa(), 0.0)
    md_map = np.where(mask, tf.md(), 0.0)
    formats.write_array(args.out_fa, fa_map, "map", None, vol.voxel_size, False)
    formats.write_array(args.out_md, md_map, "map", None, vol.voxel_size, False)
    print(f"fitted {int(mask.sum())} voxels, clamped {int(tf.clamped.sum())}")


def cmd_evaluate(args):
    _need(args.scheme)
    _need_dvol(args.pred, args.truth, args.baseline)
    s = scheme.load_scheme(args.scheme)
    pred = formats.read_volume(args.pred, s)
    truth = formats.read_volume(args.truth, s)
    base = formats.read_volume(args.baseline, s) if args.baseline else None
    mask = _load_mask(args.mask, truth)
    report = dti.evaluate(pred, truth, s, mask, baseline=base)
    formats._write_atomic(args.out, report.to_csv().encode("utf-8"))
    line = f"mean_nrmse {report.mean_nrmse:.6e} fa_rmse {report.fa_rmse:.6e} md_rmse {report.md_rmse:.6e}"
    if base is not None:
        line += f" baseline_mean_nrmse {np.mean(report.baseline_nrmse):.6e}"
    print(line)


def build_parser():
    p = _Parser(prog="qhex", description="HemiHex angular upsampling pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-scheme", help="build a nested LAR/HAR gradient scheme")
    g.add_argument("--n-lar", type=int, default=21)
    g.add_argument("--n-har", type=int, default=61)
    g.add_argument("--pool", type=int, default=4000)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--neighborhoods", help="also write the HemiHex neighborhood dump")
    g.add_argument("-o", "--out", required=True)
    g.set_defaults(func=cmd_gen_scheme)

    m = sub.add_parser("make-phantom", help="synthesize HAR and LAR phantom volumes")
    m.add_argument("--scheme", required=True)
    m.add_argument("--config")
    m.add_argument("--kind", choices=["mixed", "isotropic"])
    m.add_argument("--dims", type=int, nargs=3)
    m.add_argument("--seed", type=int)
    m.add_argument("--noise-sigma", type=float, help="Rician noise scale as a fraction of S0")
    m.add_argument("--out-har", required=True)
    m.add_argument("--out-lar", required=True)
    m.set_defaults(func=cmd_make_phantom)

    d = sub.add_parser("build-dataset", help="extract HemiHex training samples")
    d.add_argument("--scheme", required=True)
    d.add_argument("--pair", nargs=2, action="append", required=True, metavar=("LAR", "HAR"),
                   help="one phantom instance; repeat, validation takes the last instances")
    d.add_argument("--val-fraction", type=float, default=0.625)
    d.add_argument("--mask")
    d.add_argument("-o", "--out", required=True, help="output prefix (.train.qhxd / .val.qhxd)")
    d.set_defaults(func=cmd_build_dataset)

    t = sub.add_parser("train", help="three-phase training of the regressor")
    t.add_argument("--train", required=True)
    t.add_argument("--val")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int, help="override epochs of every phase")
    t.add_argument("-o", "--out", required=True)
    t.add_argument("--log", required=True)
    t.set_defaults(func=cmd_train)

    u = sub.add_parser("upsample", help="predict the HAR volume from a LAR volume")
    u.add_argument("--lar", required=True)
    u.add_argument("--scheme", required=True)
    grp = u.add_mutually_exclusive_group(required=True)
    grp.add_argument("--model")
    grp.add_argument("--baseline", action="store_true")
    u.add_argument("--mask")
    u.add_argument("-o", "--out", required=True)
    u.set_defaults(func=cmd_upsample)

    f = sub.add_parser("fit-dti", help="fit tensors and write FA / MD maps")
    f.add_argument("--vol", required=True)
    f.add_argument("--scheme")
    f.add_argument("--mask")
    f.add_argument("--out-fa", required=True)
    f.add_argument("--out-md", required=True)
    f.set_defaults(func=cmd_fit_dti)

    e = sub.add_parser("evaluate", help="signal NRMSE and FA/MD errors against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--scheme", required=True)
    e.add_argument("--baseline")
    e.add_argument("--mask")
    e.add_argument("-o", "--out", required=True)
    e.set_defaults(func=cmd_evaluate)
    return p


def _fail(code, msg):
    print(f"qhex: error: code={code} kind={_KINDS[code]} msg={json.dumps(str(msg))}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except CLIError as exc:
        return _fail(exc.code, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        args.func(args)
    except CLIError as exc:
        return _fail(exc.code, exc)
    except mlp.TrainingDiverged as exc:
        return _fail(EXIT_DIVERGED, exc)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        return _fail(EXIT_IO, exc)
    except ValueError as exc:
        return _fail(EXIT_VALIDATION, exc)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except RuntimeError as exc:
        return _fail(EXIT_VALIDATION, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
