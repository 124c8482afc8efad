"""Deterministic discrete-event simulation of a validator network.

Time is an integer tick counter. Every source of nondeterminism funnels
through one seeded generator, consumed only when the network routes a
message (drop decision, then latency draw), so two runs with the same
seed and workload produce byte-identical traces.

Faults are part of the schedule: a crash isolates a node completely for
a time window (its timers fire into the void and are lost), a partition
cuts links between groups. Periodic anti-entropy sweeps let nodes
exchange missing blocks and batches; the simulation stops scheduling
sweeps once every node agrees on the head, every pool is empty, and
every submitted batch has reached a terminal status.
"""

from __future__ import annotations

import argparse
import hashlib
import heapq
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from random import Random

from ..canonical import canonical_bytes, canonical_dumps, sha512_hex
from ..crypto import EncBlob, KeyPair, generate_keypair
from ..families import default_families
from ..families.settings import CONSENSUS_SETTING
from ..families.wallet import WalletFamily, add_card_payload
from ..ledger import (
    Batch,
    ChainStore,
    GenesisConfig,
    build_genesis_block,
    make_batch,
    make_transaction,
)
from .validator import (
    PENDING,
    ArmTimer,
    Broadcast,
    Note,
    Outbound,
    Unicast,
    ValidatorNode,
)


class SimStuck(Exception):
    """The network failed to converge within the configured horizon."""


@dataclass(frozen=True)
class Partition:
    """Links between different groups are cut for start <= t < end."""

    start: int
    end: int
    groups: tuple[tuple[int, ...], ...]

    def group_of(self, index: int) -> int:
        for gi, members in enumerate(self.groups):
            if index in members:
                return gi
        return -1  # unlisted nodes share an implicit remainder group


@dataclass(frozen=True)
class Crash:
    """Node is fully isolated (processes nothing) for start <= t < end."""

    node: int
    start: int
    end: int


@dataclass(frozen=True)
class SimConfig:
    validator_count: int = 4
    fault_count: int = 1
    latency: tuple[int, int] = (1, 5)
    drop_probability: float = 0.0
    seed: int = 0
    partitions: tuple[Partition, ...] = ()
    crashes: tuple[Crash, ...] = ()
    algorithm: str = "devmode"
    round_interval: int = 10
    view_timeout: int = 60
    sync_interval: int = 120
    max_ticks: int = 500_000

    def __post_init__(self):
        if self.validator_count < 3 * self.fault_count + 1:
            raise ValueError("validator_count must be at least 3*fault_count + 1")
        lo, hi = self.latency
        if lo < 1 or hi < lo:
            raise ValueError("latency window must satisfy 1 <= min <= max")
        if not 0.0 <= self.drop_probability < 1.0:
            raise ValueError("drop_probability must be in [0, 1)")


@dataclass
class SimTrace:
    records: list[dict]
    nodes: dict[str, ValidatorNode]
    converged: bool
    final_tick: int

    def export_lines(self) -> list[str]:
        """One canonical JSON line per record: time, node, kind, and a
        digest of the remaining payload. Stable across identical runs."""
        lines = []
        for record in self.records:
            rest = {k: v for k, v in record.items() if k not in ("t", "node", "kind")}
            lines.append(
                canonical_dumps(
                    {
                        "t": record["t"],
                        "node": record["node"],
                        "kind": record["kind"],
                        "digest": sha512_hex(canonical_bytes(rest))[:24],
                    }
                )
            )
        return lines

    def records_of(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]

    def structured(self) -> list[dict]:
        """Records reshaped as {t, node, kind, payload} for auditing."""
        return [
            {
                "t": r["t"],
                "node": r["node"],
                "kind": r["kind"],
                "payload": {k: v for k, v in r.items() if k not in ("t", "node", "kind")},
            }
            for r in self.records
        ]


def _seeded_keys(label: str) -> KeyPair:
    return generate_keypair(hashlib.sha512(label.encode()).digest()[:32])


def build_cluster(
    validator_count: int,
    algorithm: str = "devmode",
    extra_settings: dict[str, str] | None = None,
    round_interval: int = 10,
    view_timeout: int = 60,
    journal_dir: str | Path | None = None,
) -> tuple[dict[str, ValidatorNode], KeyPair, GenesisConfig]:
    """Identical genesis on every node; names n0..n{count-1}."""
    admin = _seeded_keys("chainge-cluster-admin")
    validator_keys = [_seeded_keys(f"chainge-validator-{i}") for i in range(validator_count)]
    roster = tuple(k.public_key for k in validator_keys)
    names = {key.public_key: f"n{i}" for i, key in enumerate(validator_keys)}
    settings = {CONSENSUS_SETTING: algorithm}
    settings.update(extra_settings or {})
    config = GenesisConfig(
        validators=roster, admin_public_key=admin.public_key, settings=settings
    )
    nodes: dict[str, ValidatorNode] = {}
    for i, keys in enumerate(validator_keys):
        families = default_families(admin.public_key)
        journal = None
        if journal_dir is not None:
            journal = Path(journal_dir) / f"n{i}-journal.jsonl"
        chain = ChainStore(families, journal_path=journal)
        chain.commit(build_genesis_block(config, admin, families))
        nodes[f"n{i}"] = ValidatorNode(
            name=f"n{i}",
            keys=keys,
            chain=chain,
            roster=roster,
            names=names,
            round_interval=round_interval,
            view_timeout=view_timeout,
        )
    return nodes, admin, config


class Simulator:
    def __init__(self, nodes: dict[str, ValidatorNode], config: SimConfig):
        self.nodes = nodes
        self.order = sorted(nodes)
        self.index_of = {name: i for i, name in enumerate(self.order)}
        self.config = config
        self.rng = Random(config.seed)
        self.now = 0
        self._seq = 0
        self.queue: list[tuple[int, int, str, dict]] = []
        self.records: list[dict] = []
        self.pending_submits = 0
        self.converged_at: int | None = None

    # ----------------------------------------------------------- plumbing

    def schedule(self, at: int, kind: str, data: dict) -> None:
        heapq.heappush(self.queue, (at, self._seq, kind, data))
        self._seq += 1

    def record(self, node: str, kind: str, payload: dict) -> None:
        self.records.append({"t": self.now, "node": node, "kind": kind, **payload})

    def alive(self, index: int, at: int) -> bool:
        return not any(
            c.node == index and c.start <= at < c.end for c in self.config.crashes
        )

    def connected(self, src: int, dst: int, at: int) -> bool:
        if not (self.alive(src, at) and self.alive(dst, at)):
            return False
        for part in self.config.partitions:
            if part.start <= at < part.end:
                return part.group_of(src) == part.group_of(dst)
        return True

    def route(self, src: str, dst: str, envelope: dict) -> None:
        if not self.connected(self.index_of[src], self.index_of[dst], self.now):
            return
        if self.config.drop_probability > 0 and self.rng.random() < self.config.drop_probability:
            return
        lo, hi = self.config.latency
        latency = self.rng.randint(lo, hi)
        self.schedule(self.now + latency, "deliver", {"to": dst, "from": src, "envelope": envelope})

    def handle_outbound(self, source: str, outs: list[Outbound]) -> None:
        for out in outs:
            if isinstance(out, Broadcast):
                for dst in self.order:
                    if dst != source:
                        self.route(source, dst, out.payload)
            elif isinstance(out, Unicast):
                self.route(source, out.dest, out.payload)
            elif isinstance(out, ArmTimer):
                self.schedule(self.now + out.delay, "timer", {"node": source, "payload": out.payload})
            elif isinstance(out, Note):
                self.record(source, out.kind, out.payload)

    # --------------------------------------------------------- event loop

    def submit(self, at: int, node_index: int, batch: Batch) -> None:
        self.pending_submits += 1
        self.schedule(at, "submit", {"node": node_index, "batch": batch})

    def converged(self) -> bool:
        if self.pending_submits > 0:
            return False
        heads = {node.chain.head_id for node in self.nodes.values()}
        if len(heads) != 1:
            return False
        for node in self.nodes.values():
            if node.pool:
                return False
            if any(s["status"] == PENDING for s in node.statuses.values()):
                return False
        return True

    def run(self, sweeps: bool = True) -> SimTrace:
        for crash in self.config.crashes:
            self.schedule(crash.end, "recover", {"node": crash.node})
        if sweeps:
            self.schedule(self.config.sync_interval, "wave", {})
        while self.queue:
            at, _, kind, data = heapq.heappop(self.queue)
            self.now = at
            if at > self.config.max_ticks:
                raise SimStuck(self._stuck_report())
            getattr(self, f"_do_{kind}")(data)
        if self.converged_at is None and self.converged():
            self.converged_at = self.now
            self.record("sim", "converged", {"height": self._common_height()})
        return SimTrace(
            records=self.records,
            nodes=self.nodes,
            converged=self.converged_at is not None,
            final_tick=self.now,
        )

    def _common_height(self) -> int:
        heights = {node.chain.height for node in self.nodes.values()}
        return heights.pop() if len(heights) == 1 else -1

    def _stuck_report(self) -> str:
        parts = []
        for name in self.order:
            node = self.nodes[name]
            pending = sum(1 for s in node.statuses.values() if s["status"] == PENDING)
            parts.append(f"{name}: height={node.chain.height} pool={len(node.pool)} pending={pending}")
        return "no convergence by tick %d (%s)" % (self.config.max_ticks, "; ".join(parts))

    def _do_submit(self, data: dict) -> None:
        self.pending_submits -= 1
        index = data["node"]
        # a crashed target refuses connections; the client tries the next node
        for offset in range(len(self.order)):
            candidate = (index + offset) % len(self.order)
            if self.alive(candidate, self.now):
                index = candidate
                break
        else:
            return
        name = self.order[index]
        _, outs = self.nodes[name].submit_batch(data["batch"])
        self.handle_outbound(name, outs)

    def _do_deliver(self, data: dict) -> None:
        dst = data["to"]
        if not self.alive(self.index_of[dst], self.now):
            return
        envelope = data["envelope"]
        self.record(
            dst,
            "deliver",
            {
                "from": data["from"],
                "etype": envelope.get("type"),
                "digest": sha512_hex(canonical_bytes(envelope))[:24],
            },
        )
        outs = self.nodes[dst].receive(envelope, from_name=data["from"])
        self.handle_outbound(dst, outs)

    def _do_timer(self, data: dict) -> None:
        name = data["node"]
        if not self.alive(self.index_of[name], self.now):
            return  # the timer fired while the node was down; it is lost
        outs = self.nodes[name].on_timer(data["payload"])
        self.handle_outbound(name, outs)

    def _do_recover(self, data: dict) -> None:
        name = self.order[data["node"]]
        self.record(name, "recover", {})
        self.handle_outbound(name, self.nodes[name].on_recover())

    def _do_wave(self, data: dict) -> None:
        if self.converged():
            self.converged_at = self.now
            self.record("sim", "converged", {"height": self._common_height()})
            return
        self.record("sim", "wave", {})
        for name in self.order:
            if self.alive(self.index_of[name], self.now):
                ping = self.nodes[name].make_sync_ping()
                self.handle_outbound(name, [ping])
        self.schedule(self.now + self.config.sync_interval, "wave", {})


def run_simulation(
    config: SimConfig, workload: list[tuple[int, int, Batch]]
) -> SimTrace:
    """Build a fresh cluster, inject the workload, run to quiescence.

    Workload entries are (tick, node_index, batch).
    """
    nodes, _, _ = build_cluster(
        config.validator_count,
        algorithm=config.algorithm,
        round_interval=config.round_interval,
        view_timeout=config.view_timeout,
    )
    sim = Simulator(nodes, config)
    for at, node_index, batch in workload:
        sim.submit(at, node_index % config.validator_count, batch)
    return sim.run()


class LiveCluster:
    """In-process cluster on a reliable instant network.

    The HTTP node service runs on top of this: submissions are pumped
    synchronously until the network is quiescent, so a caller observes
    its batch reach a terminal state before the response returns.
    """

    def __init__(
        self,
        validator_count: int = 4,
        algorithm: str = "devmode",
        extra_settings: dict[str, str] | None = None,
        journal_dir: str | Path | None = None,
    ):
        self.nodes, self.admin, self.genesis = build_cluster(
            validator_count,
            algorithm=algorithm,
            extra_settings=extra_settings,
            journal_dir=journal_dir,
        )
        config = SimConfig(
            validator_count=validator_count,
            fault_count=0,
            latency=(1, 1),
            drop_probability=0.0,
            seed=0,
            algorithm=algorithm,
        )
        self.sim = Simulator(self.nodes, config)

    def node(self, name: str) -> ValidatorNode:
        return self.nodes[name]

    @property
    def names(self) -> list[str]:
        return self.sim.order

    def submit_batch(self, name: str, batch: Batch) -> dict:
        status, outs = self.nodes[name].submit_batch(batch)
        self.sim.handle_outbound(name, outs)
        self.pump()
        latest = self.nodes[name].batch_status(batch.id)
        return dict(latest, batchId=batch.id) if latest else status

    def pump(self, limit: int = 200_000) -> None:
        """Drain the event queue; terminates once pools are empty."""
        steps = 0
        while self.sim.queue:
            at, _, kind, data = heapq.heappop(self.sim.queue)
            self.sim.now = at
            getattr(self.sim, f"_do_{kind}")(data)
            steps += 1
            if steps > limit:
                raise SimStuck("live cluster failed to quiesce")


# ------------------------------------------------------------------- CLI


def _synthetic_blob(label: str) -> EncBlob:
    # consensus validates blob shape only; contents never decrypt on-chain
    digest = hashlib.sha512(label.encode()).hexdigest()
    return EncBlob(
        ephemeral_public_key=digest[:64], nonce=digest[64:88], ciphertext=digest[:96]
    )


def _demo_workload(count: int, nodes: int, spacing: int) -> list[tuple[int, int, Batch]]:
    """Deterministic card additions: same arguments, same batches."""
    workload = []
    for i in range(count):
        owner = _seeded_keys(f"sim-user-{i}")
        payload = add_card_payload(f"c{i}", f"card-{i}", _synthetic_blob(f"sim-card-{i}"))
        txn = make_transaction(
            WalletFamily.family_name,
            WalletFamily.family_version,
            payload,
            owner,
            nonce=hashlib.sha512(f"sim-nonce-{i}".encode()).digest()[:16],
        )
        batch = make_batch([txn], owner)
        workload.append((1 + i * spacing, i % nodes, batch))
    return workload


def _config_from_args(args: argparse.Namespace) -> SimConfig:
    base: dict = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    partitions = tuple(
        Partition(start=p["start"], end=p["end"], groups=tuple(tuple(g) for g in p["groups"]))
        for p in base.pop("partitions", ())
    )
    crashes = tuple(
        Crash(node=c["node"], start=c["start"], end=c["end"])
        for c in base.pop("crashes", ())
    )
    if "latency" in base:
        base["latency"] = tuple(base["latency"])
    overrides = {
        "validator_count": args.validators,
        "fault_count": args.faults,
        "seed": args.seed,
        "drop_probability": args.drop,
        "algorithm": args.algorithm,
    }
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    return SimConfig(partitions=partitions, crashes=crashes, **base)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="chainge-sim",
        description="Run a deterministic validator-network simulation.",
    )
    parser.add_argument("--config", help="JSON file with SimConfig fields")
    parser.add_argument("--validators", type=int, default=None)
    parser.add_argument("--faults", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--drop", type=float, default=None)
    parser.add_argument("--algorithm", choices=("devmode", "pbft"), default=None)
    parser.add_argument("--batches", type=int, default=12, help="demo workload size")
    parser.add_argument("--spacing", type=int, default=7, help="ticks between submissions")
    parser.add_argument("--trace", help="write the canonical trace to this file")
    args = parser.parse_args(argv)

    config = _config_from_args(args)
    workload = _demo_workload(args.batches, config.validator_count, args.spacing)
    try:
        trace = run_simulation(config, workload)
    except SimStuck as exc:
        print(f"stuck: {exc}", file=sys.stderr)
        return 1

    if args.trace:
        Path(args.trace).write_text("\n".join(trace.export_lines()) + "\n")
    commits = trace.records_of("commit")
    heights = {node.chain.height for node in trace.nodes.values()}
    statuses: dict[str, int] = {}
    for node in trace.nodes.values():
        for status in node.statuses.values():
            statuses[status["status"]] = statuses.get(status["status"], 0) + 1
    print(f"converged: {trace.converged} at tick {trace.final_tick}")
    print(f"heights: {sorted(heights)}")
    print(f"commit records: {len(commits)}")
    print(f"batch statuses (summed over nodes): {statuses}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
