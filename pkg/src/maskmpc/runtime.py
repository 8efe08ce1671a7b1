"""Session set-up for a framework: keys, samplers and party contexts."""
from __future__ import annotations

from typing import Any, Callable

from .prf import KeyGraph, Sampler
from .ring import Ring
from .sharing import Framework, get_framework
from .transport import (AdversaryScript, FairBottom, Party, SessionAborted, SessionResult, TcpNetwork,
                        run_session)


def samplers(fw: Framework, seed: str | bytes = "0", keys: KeyGraph | None = None):
    keys = keys or KeyGraph.generate(fw.nodes, seed)

    def sampler_for(node: int) -> Sampler:
        if node == fw.dealer:
            return Sampler(keys, node, omniscient=True)
        return Sampler(keys.view(node), node)

    return sampler_for


def party_options(fw: Framework, *, ring_bits: int = 64, frac_bits: int = 13, mode: str = "full",
                  stores: dict | None = None, options: dict | None = None):
    ring = Ring(ring_bits)

    def kwargs(node: int) -> dict:
        return dict(parties=fw.parties, fw=fw, ring=ring, frac_bits=frac_bits, dealer=fw.dealer,
                    verifying=fw.malicious, mode=mode, store=(stores or {}).get(node),
                    options=options)

    return kwargs


def run(fw: Framework | str, program: Callable[[Party], Any], *, ring_bits: int = 64, frac_bits: int = 13,
        seed: str | bytes = "0", script: AdversaryScript | None = None, record: bool = False,
        mode: str = "full", stores: dict | None = None, options: dict | None = None,
        keys: KeyGraph | None = None) -> SessionResult:
    """Run program on every node of fw over the simulator."""
    if isinstance(fw, str):
        fw = get_framework(fw)
    return run_session(
        fw.nodes, program,
        sampler_for=samplers(fw, seed, keys),
        party_kwargs=party_options(fw, ring_bits=ring_bits, frac_bits=frac_bits, mode=mode,
                                   stores=stores, options=options),
        script=script, record=record)


def run_split(fw: Framework | str, program, **kwargs) -> tuple[SessionResult, SessionResult]:
    """Offline run that stores per-gate material, then an online run that loads it."""
    offline = run(fw, program, mode="offline", **kwargs)
    online = run(fw, program, mode="online", stores=offline.stores, **kwargs)
    return offline, online


def run_tcp(fw: Framework | str, program: Callable[[Party], Any], me: int, endpoints: dict, keys: KeyGraph, *,
            ring_bits: int = 64, frac_bits: int = 13, mode: str = "full", store: dict | None = None,
            options: dict | None = None, timeout: float = 30.0) -> SessionResult:
    """Run one node of fw in this process over a TCP mesh.

    keys is this node's view (the dealer needs the full graph). The meter
    only sees what this node sends.
    """
    if isinstance(fw, str):
        fw = get_framework(fw)
    if set(endpoints) != set(fw.nodes):
        raise ValueError(f"{fw.name} needs endpoints for nodes {fw.nodes}, got {sorted(endpoints)}")
    net = TcpNetwork(me, endpoints, timeout=timeout)
    kwargs = party_options(fw, ring_bits=ring_bits, frac_bits=frac_bits, mode=mode,
                           stores={me: store} if store is not None else None, options=options)(me)
    ctx = Party(me, kwargs.pop("parties"), net, Sampler(keys, me, omniscient=me == fw.dealer), **kwargs)
    output, reasons = None, {}
    try:
        output = program(ctx)
        if ctx.verifying and not ctx.finalized:
            ctx.verify()
        outcome = "ok"
    except SessionAborted as exc:
        outcome, reasons[me] = "abort", str(exc)
    except FairBottom as exc:
        outcome, reasons[me] = "fair-⊥", str(exc)
    finally:
        net.close()
    return SessionResult({me: output}, {me: outcome}, net.meter, [], {me: ctx.store}, reasons)
