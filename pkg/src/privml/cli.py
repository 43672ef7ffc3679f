"""``privml`` command line: party, train, privacy, report.

Topology files are TOML::

    [parties]
    P0 = "127.0.0.1:7100"
    P1 = "127.0.0.1:7101"
    P3 = "127.0.0.1:7102"
    Dealer = "127.0.0.1:7103"
    Tail = "127.0.0.1:7104"

    [deployment]
    seed = 0
    mask_bound = 100.0
    spawn = true     # train starts every party itself on these addresses

Party options fall back to ``PRIVML_ROLE``, ``PRIVML_LISTEN``,
``PRIVML_PEERS``, ``PRIVML_SEED`` and ``PRIVML_MASK_BOUND`` when the flag is
not given.
"""

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import tomli

from .dataset import desk_paths, load_idx
from .experiments import MODELS, emit_report, read_records, slowdown, train
from .net import Party, PartyRole, PartyServer, TcpTransport
from .net.transport import parse_address
from .privacy import linear_privacy_bound, noise_privacy, permutation_privacy
from .sharing import DEFAULT_MASK_BOUND

log = logging.getLogger("privml")

ENV_PREFIX = "PRIVML_"


def _env(name, default=None):
    return os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"), default)


def load_topology(path):
    with open(path, "rb") as f:
        cfg = tomli.load(f)
    parties = cfg.get("parties")
    if not parties:
        raise ValueError(f"{path}: no [parties] table")
    addresses = {PartyRole.parse(role): parse_address(addr) for role, addr in parties.items()}
    return addresses, cfg.get("deployment", {})


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


# -- party -------------------------------------------------------------------


def cmd_party(args):
    role = args.role or _env("role")
    listen = args.listen or _env("listen")
    peers = args.peers or _env("peers")
    seed = int(args.seed if args.seed is not None else _env("seed", 0))
    bound = float(args.mask_bound if args.mask_bound is not None else _env("mask_bound", DEFAULT_MASK_BOUND))
    if not role:
        raise SystemExit("party: --role (or PRIVML_ROLE) is required")
    role = PartyRole.parse(role)
    addresses = {}
    if peers:
        addresses, _ = load_topology(peers)
    if not listen:
        if role not in addresses:
            raise SystemExit(f"party: no --listen and {role.value} missing from topology")
        host, port = addresses[role]
    else:
        host, port = parse_address(listen)
    party = Party(role, seed=seed, mask_bound=bound)
    party.transport = TcpTransport(addresses)
    server = PartyServer(party, host, port)
    log.info("%s listening on %s", role.value, server.address)
    print(f"{role.value} listening on {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


# -- train -------------------------------------------------------------------


class _Spawned:
    """Every party of a topology as threads in this process, on the configured ports."""

    def __init__(self, addresses, seed, mask_bound):
        self.servers = []
        for role, (host, port) in addresses.items():
            if role is PartyRole.COORDINATOR:
                continue
            party = Party(role, seed=seed, mask_bound=mask_bound)
            party.transport = TcpTransport(addresses)
            self.servers.append(PartyServer(party, host, port).start())
        self.transport = TcpTransport(addresses)

    def close(self):
        self.transport.close()
        for s in self.servers:
            s.stop()


def _load_data(args):
    images, labels = (args.images, args.labels) if args.images else desk_paths()
    ds = load_idx(images, labels, args.limit)
    n_val = args.val if args.val is not None else len(ds) // 5
    return ds.with_split(len(ds) - n_val, n_val)


def cmd_train(args):
    ds = _load_data(args)
    modes = ("framework", "local") if args.mode == "both" else (args.mode,)
    runs = {}
    for mode in modes:
        spawned = transport = None
        if mode == "framework" and args.config:
            addresses, dep = load_topology(args.config)
            if dep.get("spawn", False):
                spawned = _Spawned(addresses, args.seed, float(dep.get("mask_bound", DEFAULT_MASK_BOUND)))
                transport = spawned.transport
            else:
                transport = TcpTransport(addresses)
        try:
            records = train(args.model, ds, mode, args.steps, args.seed, transport=transport,
                            eval_every=args.eval_every, batch_size=args.batch_size,
                            learning_rate=args.lr)
        finally:
            if spawned is not None:
                spawned.close()
            elif transport is not None:
                transport.close()
        runs[f"{args.model}-{mode}"] = records
        for r in records:
            print(f"{args.model:8s} {r.mode:9s} batch {r.batch:6d}  acc {r.val_accuracy:.4f}  "
                  f"loss {r.loss:.5f}  {r.elapsed_s:8.2f}s", flush=True)
    paths = emit_report(args.out, runs)
    for model, factor in slowdown(runs).items():
        print(f"{model}: framework/local time ratio {factor:.1f}")
    print(f"wrote {paths['comparison']}")
    return 0


# -- privacy -----------------------------------------------------------------


def privacy_rows(ns, deltas, sigmas, ks):
    rows = []
    for n in ns:
        b = permutation_privacy(n)
        rows.append(("permutation", n, "", "", "", b.epsilon, b.log_epsilon))
    for n in ns:
        if n < 2:
            continue
        for d in deltas:
            b = linear_privacy_bound(n, d)
            rows.append(("linear", n, d, "", "", b.epsilon, ""))
    for s in sigmas:
        for k in ks:
            b = noise_privacy(s, k)
            rows.append(("noise", "", b.delta, s, k, b.epsilon, ""))
    return rows


PRIVACY_HEADER = ("transform", "n", "delta", "sigma", "k", "epsilon", "log_epsilon")


def cmd_privacy(args):
    rows = privacy_rows(_ints(args.n), _floats(args.delta), _floats(args.sigma), _floats(args.k))
    if args.format == "csv":
        w = csv.writer(sys.stdout)
        w.writerow(PRIVACY_HEADER)
        w.writerows(rows)
        return 0
    cells = [PRIVACY_HEADER] + [tuple(f"{v:.6g}" if isinstance(v, float) else str(v) for v in r) for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(PRIVACY_HEADER))]
    for j, c in enumerate(cells):
        print("  ".join(v.rjust(w) for v, w in zip(c, widths)))
        if j == 0:
            print("  ".join("-" * w for w in widths))
    return 0


# -- report ------------------------------------------------------------------


def cmd_report(args):
    runs = {Path(p).stem: read_records(p) for p in args.runs}
    paths = emit_report(args.out, runs)
    for model, factor in slowdown(runs).items():
        print(f"{model}: framework/local time ratio {factor:.1f}")
    print(f"wrote {paths['comparison']} and {paths['curves']}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="privml", description="Private training with shared values and helper parties.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("party", help="run one party as a TCP server")
    p.add_argument("--role", help="P0, P1, P3, Dealer or Tail")
    p.add_argument("--listen", help="host:port to bind (default: this role's address in --peers)")
    p.add_argument("--peers", help="topology TOML with every party's address")
    p.add_argument("--seed", type=int)
    p.add_argument("--mask-bound", type=float)
    p.set_defaults(func=cmd_party)

    t = sub.add_parser("train", help="train a model and write learning curves")
    t.add_argument("--model", choices=sorted(MODELS), default="logistic")
    t.add_argument("--mode", choices=("framework", "local", "both"), default="both")
    t.add_argument("--steps", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--limit", type=int, default=2500, help="use the first L samples")
    t.add_argument("--val", type=int, help="validation samples taken from the end (default L/5)")
    t.add_argument("--config", help="topology TOML; without it parties run in-process")
    t.add_argument("--images", help="IDX images file (default: bundled 5000-image sample)")
    t.add_argument("--labels", help="IDX labels file")
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--eval-every", type=int, default=100)
    t.add_argument("--out", default="runs")
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("privacy", help="tabulate privacy bounds")
    q.add_argument("--n", default="2,3,5,10")
    q.add_argument("--delta", default="0.5,1,2")
    q.add_argument("--sigma", default="1")
    q.add_argument("--k", default="1,2,3")
    q.add_argument("--format", choices=("pretty", "csv"), default="pretty")
    q.set_defaults(func=cmd_privacy)

    r = sub.add_parser("report", help="merge run CSVs into a comparison file and curve JSON")
    r.add_argument("runs", nargs="+", help="CSV files named <model>-<mode>.csv")
    r.add_argument("--out", default="report")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "train" and bool(args.images) != bool(args.labels):
        raise SystemExit("train: --images and --labels go together")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
