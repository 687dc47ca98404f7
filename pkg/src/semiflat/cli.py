"""Command line entry point.

Exit status is 0 on success, 1 on a domain error and 2 on a usage error.
Errors print one line ``code=NAME detail=...`` to stderr.
"""

import argparse
import sys

import numpy as np

from . import io as sio
from .embedding import (
    EmbedKind,
    build_reparam_basis,
    embed,
    spec_from_dict,
    verify_function_equality,
)
from .errors import SemiflatError, Usage
from .experiment import DEFAULT_SEED
from .landscape import (
    ProbeConfig,
    assemble_embedded_hessian,
    classify,
    compute_flat_radius,
    make_report,
    probe_flat_subspace,
    probe_surplus_box,
    verify_stationary,
)
from .network import Activation
from .pacbayes import PacBayesConfig


class SuiteFailed(SemiflatError):
    code = "SuiteFailed"


class BadInput(SemiflatError):
    code = "BadInput"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise Usage(message)


def _add(sub, name, help_, *flags, seed=0):
    p = sub.add_parser(name, help=help_)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--out")
    for flag in flags:
        flag(p)
    return p


def _net(p):
    p.add_argument("--net", required=True)


def _data(p):
    p.add_argument("--data", required=True)


def _spec_opt(p):
    p.add_argument("--spec")


def _tol(default):
    def add(p):
        p.add_argument("--tol", type=float, default=default)
    return add


def _threads(p):
    p.add_argument("--threads", type=int, default=None)


def _method(p):
    p.add_argument("--method", choices=("analytic", "fd"), default="analytic")


def _pb(p):
    p.add_argument("--sigma", type=float, default=1e3)
    p.add_argument("--tau", type=float, default=1e-2)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--K", type=float, default=2.0)


def build_parser():
    parser = _Parser(prog="semiflat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = _add(sub, "train", "train a network to a stationary point", _data)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--activation", choices=[a.value for a in Activation], required=True)
    p.add_argument("--target", type=float, default=1e-12)
    p.add_argument("--restarts", type=int, default=20)

    _add(sub, "embed", "widen a network", _net, lambda p: p.add_argument("--spec", required=True))

    p = _add(sub, "verify-equal", "max output deviation between two networks", _tol(1e-12))
    p.add_argument("--narrow", required=True)
    p.add_argument("--wide", required=True)
    p.add_argument("--probes", type=int, default=64)

    _add(sub, "verify-stationary", "gradient check", _net, _data, _tol(1e-7))
    _add(sub, "hessian", "Hessian and spectrum", _net, _data, _spec_opt, _method)

    p = _add(sub, "classify", "critical point verdict", _net, _data, _spec_opt, _method)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--samples", type=int, default=32)

    p = _add(sub, "flat-probe", "exact flatness probes of an embedding",
             _net, _data, lambda p: p.add_argument("--spec", required=True))
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--samples", type=int, default=32)

    p = _add(sub, "pacbayes", "KL and bound sweep over surplus units", _pb, seed=DEFAULT_SEED)
    p.add_argument("--h-max", type=int, default=20)

    p = _add(sub, "experiment", "perturbation study over widths", _threads, seed=DEFAULT_SEED)
    p.add_argument("--activation", choices=[a.value for a in Activation], required=True)
    p.add_argument("--h-max", type=int, default=20)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--no-perturb-baseline", action="store_true")
    p.add_argument("--surplus-zero", action="store_true")

    _add(sub, "suite", "landscape demonstrations", _threads)
    return parser


def _write_or_print(args, obj):
    if args.out:
        sio.write_json(args.out, obj)
    else:
        print(sio.dumps(obj))


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_train(args):
    from .trainer import TrainConfig, init_params, train

    data = sio.read_dataset(args.data)
    init = init_params(data.input_dim, args.hidden, data.output_dim, args.activation, args.seed)
    cfg = TrainConfig(target_loss=args.target, seed=args.seed, restarts=args.restarts,
                      relu_pattern_init=True)
    res = train(init, data, cfg)
    out = sio.network_to_dict(res.params)
    out["train"] = {"final_loss": res.final_loss, "grad_norm": res.grad_norm,
                    "iters": res.iters, "converged": res.converged,
                    "restarts_used": res.restarts_used}
    if args.out:
        sio.write_json(args.out, out)
    print(f"final_loss={res.final_loss!r} grad_norm={res.grad_norm!r} restarts={res.restarts_used}")


def cmd_embed(args):
    narrow = sio.read_network(args.net)
    wide = embed(narrow, spec_from_dict(sio.read_json(args.spec)))
    _write_or_print(args, sio.network_to_dict(wide))


def cmd_verify_equal(args):
    narrow, wide = sio.read_network(args.narrow), sio.read_network(args.wide)
    dev = verify_function_equality(narrow, wide, args.probes, args.seed)
    out = {"deviation": dev, "tol": args.tol, "passed": dev <= args.tol}
    if args.out:
        sio.write_json(args.out, out)
    print(f"deviation={dev!r} passed={str(dev <= args.tol).lower()}")


def cmd_verify_stationary(args):
    st = verify_stationary(sio.read_network(args.net), sio.read_dataset(args.data), args.tol)
    out = {"grad_norm": st.grad_norm, "loss": st.loss, "tol": args.tol, "passed": st.passed}
    if args.out:
        sio.write_json(args.out, out)
    print(f"grad_norm={st.grad_norm!r} loss={st.loss!r} passed={str(st.passed).lower()}")


def _report(args):
    net, data = sio.read_network(args.net), sio.read_dataset(args.data)
    if args.spec:
        spec = spec_from_dict(sio.read_json(args.spec))
        return assemble_embedded_hessian(net, data, spec, narrow_method=args.method), spec
    return make_report(net, data, args.method), None


def cmd_hessian(args):
    rep, _ = _report(args)
    out = rep.to_dict()
    out["matrix"] = rep.full
    _write_or_print(args, out)


def cmd_classify(args):
    rep, spec = _report(args)
    radius = args.radius
    if radius is None:
        radius = 1e-3
        if spec is not None and spec.kind is EmbedKind.REPLICATE_RELU:
            h0 = spec.target_hidden - rep.blocks["gram"].shape[0]
            basis = build_reparam_basis(spec.resolved(h0), h0)
            radius = min(1e-3, 0.5 * compute_flat_radius(rep.point, rep.data, basis))
    v = classify(rep, ProbeConfig(radius=radius, samples=args.samples, seed=args.seed))
    out = v.to_dict()
    out["radius"] = radius
    _write_or_print(args, out)


def cmd_flat_probe(args):
    narrow, data = sio.read_network(args.net), sio.read_dataset(args.data)
    spec = spec_from_dict(sio.read_json(args.spec)).resolved(narrow.hidden)
    wide = embed(narrow, spec)
    out = {"kind": spec.kind.value}
    if spec.kind.replicates:
        rep = assemble_embedded_hessian(narrow, data, spec)
        basis = build_reparam_basis(spec, narrow.hidden)
        flat_radius = (compute_flat_radius(wide, data, basis)
                       if narrow.activation is Activation.RELU else None)
        radius = args.radius
        if radius is None:
            radius = 0.99 * flat_radius if flat_radius is not None else 1e-3
        lo, hi = rep.layout["eta"]
        res = probe_flat_subspace(wide, data, rep.transform[:, lo:hi], radius, args.samples,
                                  args.seed)
        out.update({"flat_radius": flat_radius, "radius": radius, "residual": res})
    elif spec.kind is EmbedKind.INACTIVE_UNITS_RELU:
        res = probe_surplus_box(wide, data, narrow.hidden, spec.K, args.samples, args.seed)
        out.update({"K": spec.K, "residual": res})
    else:
        raise Usage(f"no flat probe defined for {spec.kind.value}")
    _write_or_print(args, out)


def cmd_pacbayes(args):
    from .experiment import pacbayes_sweep, pacbayes_to_csv

    cfg = PacBayesConfig(sigma=args.sigma, tau=args.tau, K=args.K, delta=args.delta)
    rows = pacbayes_sweep(args.seed, max(1, args.h_max - 5), cfg)
    text = pacbayes_to_csv(rows)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)


def cmd_experiment(args):
    from .experiment import ExperimentConfig, rows_to_csv, run_generalization_experiment

    cfg = ExperimentConfig(
        activation=args.activation, H_sweep=range(5, args.h_max + 1), trials=args.trials,
        seed=args.seed, perturb_baseline=not args.no_perturb_baseline,
        surplus_zero=args.surplus_zero, threads=args.threads,
    )
    res = run_generalization_experiment(cfg)
    text = rows_to_csv(res.rows)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    print(f"kendall_tau={res.trend_tau!r} p_value={res.trend_pvalue!r}", file=sys.stderr)


def cmd_suite(args):
    from .experiment import run_classification_suite

    report = run_classification_suite(args.seed, args.threads)
    _write_or_print(args, report)
    for check in report["checks"]:
        print(f"{check['name']}: {'pass' if check['passed'] else 'FAIL'}", file=sys.stderr)
    if not report["passed"]:
        failed = [c["name"] for c in report["checks"] if not c["passed"]]
        raise SuiteFailed(",".join(failed))


COMMANDS = {
    "train": cmd_train,
    "embed": cmd_embed,
    "verify-equal": cmd_verify_equal,
    "verify-stationary": cmd_verify_stationary,
    "hessian": cmd_hessian,
    "classify": cmd_classify,
    "flat-probe": cmd_flat_probe,
    "pacbayes": cmd_pacbayes,
    "experiment": cmd_experiment,
    "suite": cmd_suite,
}


def _fail(exc):
    detail = " ".join(str(exc.detail).split())
    print(f"code={exc.code} detail={detail}", file=sys.stderr)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except Usage as exc:
        _fail(exc)
        return 2
    except SemiflatError as exc:
        _fail(exc)
        return 1
    except (ValueError, np.linalg.LinAlgError) as exc:
        _fail(BadInput(str(exc)))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
