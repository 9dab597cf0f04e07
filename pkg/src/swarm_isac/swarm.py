"""The ADMM loop run as N UAV agents and a proxy exchanging messages.

Steps 1 and 3 run inside each agent on its own variables. For Step 2 every
agent reports ``(z_n, mu_n, q_n^next)`` to the proxy, which assembles the
swarm, evaluates the consensus gradient and sends each agent only its own
row. The bus is in-process, lossless and FIFO.

Each round the proxy also closes the iteration: it records the trace and
decides whether to halt. Agents are modelled as pure functions from
``(state, message)`` to ``(state, reply)``, so they can be stepped in any
order or on any thread without changing the result.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .admm import (AdmmConfig, SwarmState, converged, initial_state, make_record,
                   project_rows, residuals, should_record)
from .exceptions import ProtocolError, StepFailure, SwarmIsacError
from .gradients import consensus_value_and_grad
from .model import Scenario

PROXY = -1


class MessageKind(enum.Enum):
    ZMuReport = "z_mu_report"
    GradientBroadcast = "gradient_broadcast"
    IterationBarrier = "iteration_barrier"
    Halt = "halt"


DATA_KINDS = (MessageKind.ZMuReport, MessageKind.GradientBroadcast)


@dataclass(frozen=True, eq=False)
class Message:
    """One bus message.

    ``payload`` is ``(z, mu, q_next)`` for a report, the recipient's gradient
    row for a broadcast and ``None`` for control messages. ``inner`` counts
    the gradient rounds within one outer iteration.
    """

    kind: MessageKind
    sender: int
    iter: int
    payload: object = None
    recipient: int = PROXY
    inner: int = 0


@dataclass(frozen=True, eq=False)
class AgentState:
    """Everything UAV ``id`` knows. ``q_pending`` is its Step 1 output for
    the round in progress, ``inner`` the number of gradient steps taken in it."""

    id: int
    q0: np.ndarray
    q: np.ndarray
    z: np.ndarray
    mu: np.ndarray
    iter: int = 0
    inner: int = 0
    q_pending: np.ndarray | None = None
    halted: bool = False


def _row(v):
    return np.asarray(v, dtype=float).reshape(1, 3)


def _local_projection(z, mu, q0, cfg: AdmmConfig, r_max):
    """Step 1 for one UAV, on ``(1, 3)`` rows."""
    return project_rows(z - mu / cfg.rho, q0, r_max)


def _report(agent: AgentState):
    return Message(MessageKind.ZMuReport, agent.id, agent.iter,
                   payload=(agent.z[0], agent.mu[0], agent.q_pending[0]), inner=agent.inner)


def make_agents(scenario: Scenario, init_z=None):
    """Agents initialized like :func:`swarm_isac.admm.initial_state`."""
    state = initial_state(scenario, init_z)
    return [AgentState(id=n, q0=_row(scenario.initial_positions[n]), q=_row(state.q[n]),
                       z=_row(state.z[n]), mu=_row(state.mu[n]))
            for n in range(scenario.n_uavs)]


def agent_step1_3(agent: AgentState, incoming: Message | None, cfg: AdmmConfig, r_max):
    """Advance one agent on ``incoming``; return the new state and the
    message to send (``None`` when nothing is sent).

    * ``None``: bootstrap; run Step 1 and report without touching ``z``.
    * gradient: ``z -= eta * g``; after the last inner step apply Step 3,
      the next Step 1 and report the new iteration.
    * ``IterationBarrier``: tag check only.
    * ``Halt``: freeze.
    """
    if agent.halted:
        raise ProtocolError(f"agent {agent.id} received a message after Halt")
    if incoming is None:
        if agent.iter != 0 or agent.q_pending is not None:
            raise ProtocolError(f"agent {agent.id} bootstrapped twice")
        q_pending = _local_projection(agent.z, agent.mu, agent.q0, cfg, r_max)
        agent = replace(agent, q_pending=q_pending)
        return agent, _report(agent)
    if incoming.recipient != agent.id:
        raise ProtocolError(f"agent {agent.id} got a message for {incoming.recipient}")
    if incoming.kind is MessageKind.Halt:
        return replace(agent, halted=True), None
    if incoming.iter != agent.iter:
        raise ProtocolError(f"agent {agent.id} at iteration {agent.iter} got a "
                            f"{incoming.kind.name} tagged {incoming.iter}")
    if incoming.kind is MessageKind.IterationBarrier:
        return agent, None
    if incoming.kind is not MessageKind.GradientBroadcast:
        raise ProtocolError(f"agent {agent.id} cannot handle {incoming.kind.name}")
    if agent.q_pending is None:
        raise ProtocolError(f"agent {agent.id} got a gradient before bootstrapping")
    if incoming.inner != agent.inner:
        raise ProtocolError(f"agent {agent.id} expected inner step {agent.inner}, "
                            f"got {incoming.inner}")

    with np.errstate(over="ignore", invalid="ignore"):
        z = agent.z - cfg.eta * _row(incoming.payload)
    if not np.all(np.isfinite(z)):
        exc = StepFailure("consensus variables became non-finite; step size too large?")
        exc.iteration = agent.iter
        raise exc
    if agent.inner + 1 < cfg.inner_steps:
        agent = replace(agent, z=z, inner=agent.inner + 1)
        return agent, _report(agent)

    q = agent.q_pending
    mu = agent.mu + cfg.rho * (q - z)
    q_pending = _local_projection(z, mu, agent.q0, cfg, r_max)
    agent = replace(agent, q=q, z=z, mu=mu, iter=agent.iter + 1, inner=0, q_pending=q_pending)
    return agent, _report(agent)


def _assemble(reports, n_uavs):
    """Stack report payloads by sender; check one report per agent, one tag."""
    if len(reports) != n_uavs:
        raise ProtocolError(f"expected {n_uavs} reports, got {len(reports)}")
    by_sender = {}
    for msg in reports:
        if msg.kind is not MessageKind.ZMuReport:
            raise ProtocolError(f"proxy cannot handle {msg.kind.name}")
        if msg.sender in by_sender:
            raise ProtocolError(f"duplicate report from agent {msg.sender}")
        if not 0 <= msg.sender < n_uavs:
            raise ProtocolError(f"report from unknown agent {msg.sender}")
        by_sender[msg.sender] = msg
    tags = {(m.iter, m.inner) for m in reports}
    if len(tags) != 1:
        raise ProtocolError(f"reports carry mixed iteration tags {sorted(tags)}")
    ordered = [by_sender[n] for n in range(n_uavs)]
    Z = np.array([m.payload[0] for m in ordered])
    Mu = np.array([m.payload[1] for m in ordered])
    Q_next = np.array([m.payload[2] for m in ordered])
    return Z, Mu, Q_next, tags.pop()


def proxy_round(reports, scenario: Scenario, cfg: AdmmConfig):
    """One gradient round: N reports in, N per-agent gradient broadcasts out."""
    Z, Mu, Q_next, (it, inner) = _assemble(reports, scenario.n_uavs)
    try:
        value, grad = consensus_value_and_grad(Z, Q_next, Mu, cfg.rho, scenario)
        if not np.isfinite(value):
            raise StepFailure(f"objective is not finite ({value})")
    except SwarmIsacError as exc:
        exc.iteration = it
        raise
    return [Message(MessageKind.GradientBroadcast, PROXY, it, payload=grad[n].copy(),
                    recipient=n, inner=inner)
            for n in range(scenario.n_uavs)]


class MessageBus:
    """Lossless FIFO bus with per-kind message accounting."""

    def __init__(self):
        self._queues = {}
        self.counts = {kind: 0 for kind in MessageKind}

    def post(self, msg: Message):
        self._queues.setdefault(msg.recipient, deque()).append(msg)
        self.counts[msg.kind] += 1

    def drain(self, recipient):
        queue = self._queues.get(recipient)
        if not queue:
            return []
        out = list(queue)
        queue.clear()
        return out

    def pending(self):
        return sum(len(q) for q in self._queues.values())

    @property
    def data_messages(self):
        return sum(self.counts[kind] for kind in DATA_KINDS)

    @property
    def control_messages(self):
        return sum(self.counts.values()) - self.data_messages


class Proxy:
    """Gradient helper, barrier and trace recorder.

    Keeps the previous round's ``Q_next`` and ``Mu`` to compute residuals,
    since only the proxy ever sees the whole swarm.
    """

    def __init__(self, scenario: Scenario, cfg: AdmmConfig):
        self.scenario = scenario
        self.cfg = cfg
        self.trace = []
        self.halted = False
        self._prev_q_next = None
        self._prev_mu = None
        self._expect = (0, 0)

    def handle(self, reports):
        """Process one complete round; return the messages to broadcast."""
        n = self.scenario.n_uavs
        if self.halted:
            raise ProtocolError("proxy received reports after Halt")
        Z, Mu, Q_next, (it, inner) = _assemble(reports, n)
        if (it, inner) != self._expect:
            raise ProtocolError(f"proxy expected round {self._expect}, got {(it, inner)}")
        self._expect = (it, inner + 1) if inner + 1 < self.cfg.inner_steps else (it + 1, 0)
        if inner == 0 and it > 0:
            state = SwarmState(q=self._prev_q_next, z=Z, mu=Mu, iter=it)
            primal, dual = residuals(state.q, Z, Mu, self._prev_mu)
            done = converged(primal, dual, self.cfg)
            last = done or it == self.cfg.max_iters
            if should_record(it, self.cfg, last):
                self.trace.append(make_record(state, primal, dual, self.cfg.rho, self.scenario))
            if last:
                self.halted = True
                return [Message(MessageKind.Halt, PROXY, it, recipient=k) for k in range(n)]
        if inner == 0:
            self._prev_q_next, self._prev_mu = Q_next, Mu
        out = proxy_round(reports, self.scenario, self.cfg)
        if inner == 0 and it > 0:
            out = [Message(MessageKind.IterationBarrier, PROXY, it, recipient=k)
                   for k in range(n)] + out
        return out


class Simulation:
    """Agents, proxy and bus for one run.

    ``executor`` (e.g. a ``concurrent.futures.ThreadPoolExecutor``) steps
    the agents concurrently; ``shuffle`` (a ``numpy`` Generator) permutes
    the order in which agents are stepped and reports are delivered. Neither
    changes the result.
    """

    def __init__(self, scenario: Scenario, cfg: AdmmConfig = AdmmConfig(), init_z=None,
                 executor=None, shuffle=None):
        self.scenario = scenario
        self.cfg = cfg
        self.agents = make_agents(scenario, init_z)
        self.proxy = Proxy(scenario, cfg)
        self.bus = MessageBus()
        self.executor = executor
        self.shuffle = shuffle

    def _order(self, items):
        items = list(items)
        if self.shuffle is not None:
            items = [items[i] for i in self.shuffle.permutation(len(items))]
        return items

    def _step_agent(self, n, inbox):
        agent, out = self.agents[n], []
        for msg in inbox:
            agent, reply = agent_step1_3(agent, msg, self.cfg, self.scenario.r_max)
            if reply is not None:
                out.append(reply)
        return n, agent, out

    def _step_agents(self, inboxes):
        jobs = self._order(inboxes.items())
        if self.executor is None:
            results = [self._step_agent(n, inbox) for n, inbox in jobs]
        else:
            futures = [self.executor.submit(self._step_agent, n, inbox) for n, inbox in jobs]
            results = [f.result() for f in futures]
        for n, agent, out in results:
            self.agents[n] = agent
            for msg in out:
                self.bus.post(msg)

    def run(self):
        r_max = self.scenario.r_max
        for n in self._order(range(self.scenario.n_uavs)):
            self.agents[n], report = agent_step1_3(self.agents[n], None, self.cfg, r_max)
            self.bus.post(report)
        while not self.proxy.halted:
            reports = self._order(self.bus.drain(PROXY))
            for msg in self.proxy.handle(reports):
                self.bus.post(msg)
            inboxes = {n: self.bus.drain(n) for n in range(self.scenario.n_uavs)}
            self._step_agents({n: box for n, box in inboxes.items() if box})
        if self.bus.pending():
            raise ProtocolError(f"{self.bus.pending()} messages left on the bus after Halt")
        return self.final_state(), self.proxy.trace

    def final_state(self):
        a = self.agents
        return SwarmState(q=np.concatenate([x.q for x in a]), z=np.concatenate([x.z for x in a]),
                          mu=np.concatenate([x.mu for x in a]), iter=a[0].iter)


def simulate(scenario: Scenario, cfg: AdmmConfig = AdmmConfig(), init_z=None):
    """Run the distributed protocol; same return value as :func:`swarm_isac.admm.run`."""
    return Simulation(scenario, cfg, init_z).run()
