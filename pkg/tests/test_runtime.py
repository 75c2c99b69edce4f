"""Endpoint operations, linearity, delegation, and the monitor."""

from __future__ import annotations

import threading

import pytest

from corpus import A, C, P, Q, S, calc, g_auth, oauth
from mpst import (
    ErrorKind,
    Label,
    Role,
    SessionSort,
    comm,
    end_,
    open_session,
    project,
)
from mpst.errors import SessionRuntimeError, ShapeError
from mpst.protocol import UNIT
from mpst.runtime import EventKind
from mpst.transport import AsyncBuffered, FramedSocket, SyncRendezvous


def run_threads(*fns):
    errors = []

    def wrap(fn):
        def run():
            try:
                fn()
            except BaseException as e:  # surfaced to the test
                errors.append(e)

        return run

    threads = [threading.Thread(target=wrap(f), daemon=True) for f in fns]
    for t in threads:
        t.start()
    for t in threads:
        t.join(10)
    if errors:
        raise errors[0]
    return errors


def test_open_session_returns_per_role_endpoints():
    sess = open_session(oauth(), SyncRendezvous(), monitored=True)
    assert [r.name for r in sess.roles] == ["s", "c", "a"]
    assert set(sess.endpoints) == set(sess.roles)
    sess.close_transport()


def test_open_session_rejects_unguarded_before_allocation():
    from mpst import rec, var_

    with pytest.raises(ShapeError) as e:
        open_session(rec("X", var_("X")))
    assert e.value.kind is ErrorKind.UNGUARDED_RECURSION


def test_end_only_protocol_admits_close_only():
    sess = open_session(end_(), SyncRendezvous(), roles=(P, Q), monitored=True)
    for r in (P, Q):
        sess.endpoints[r].close()
    ok, _ = sess.monitor.verdict()
    assert ok


def test_oauth_full_run_with_api():
    sess = open_session(oauth(), SyncRendezvous(), monitored=True)

    def client():
        ep = sess.endpoints[C]
        label, payload, ep = ep.receive(S)
        assert (label.name, payload) == ("login", "Hi")
        ep = ep.send(A, "pwd", "pass")
        ep.close()

    def service():
        ep = sess.endpoints[S]
        ep = ep.send(C, "login", "Hi")
        label, ok, ep = ep.receive(A)
        assert (label.name, ok) == ("auth", True)
        ep.close()

    def authenticator():
        ep = sess.endpoints[A]
        label, pwd, ep = ep.receive(C)
        assert (label.name, pwd) == ("pwd", "pass")
        ep = ep.send(S, "auth", True)
        ep.close()

    run_threads(client, service, authenticator)
    ok, why = sess.monitor.verdict()
    assert ok, why
    assert len(sess.monitor.events) == 9


def test_monitor_flags_missing_close():
    sess = open_session(comm(P, Q, Label("m"), end_()), SyncRendezvous(), monitored=True)

    def p():
        sess.endpoints[P].send(Q, "m", None)  # never closes

    def q():
        _, _, ep = sess.endpoints[Q].receive(P)
        ep.close()

    run_threads(p, q)
    ok, why = sess.monitor.verdict()
    assert not ok and "p" in why


def test_send_error_taxonomy():
    sess = open_session(oauth(), AsyncBuffered(2))
    ep_s = sess.endpoints[S]
    with pytest.raises(SessionRuntimeError) as e:
        ep_s.send(A, "login", "Hi")  # protocol says talk to c
    assert e.value.kind is ErrorKind.WRONG_PEER
    with pytest.raises(SessionRuntimeError) as e:
        ep_s.send(C, "nope", "Hi")
    assert e.value.kind is ErrorKind.UNKNOWN_LABEL
    with pytest.raises(SessionRuntimeError) as e:
        ep_s.send(C, "login", 42)
    assert e.value.kind is ErrorKind.PAYLOAD_SORT_MISMATCH
    # misuse probes above did not consume the endpoint
    ep2 = ep_s.send(C, "login", "Hi")
    with pytest.raises(SessionRuntimeError) as e:
        ep_s.send(C, "login", "again")
    assert e.value.kind is ErrorKind.INVALID_ENDPOINT
    # receive on an output stage
    with pytest.raises(SessionRuntimeError) as e:
        sess.endpoints[C].send(S, "login", "x")  # c must receive here
    assert e.value.kind is ErrorKind.WRONG_PEER
    del ep2


def test_receive_error_taxonomy():
    sess = open_session(oauth(), AsyncBuffered(2))
    ep_c = sess.endpoints[C]
    with pytest.raises(SessionRuntimeError) as e:
        ep_c.receive(A)  # protocol says listen to s
    assert e.value.kind is ErrorKind.WRONG_PEER
    sess.endpoints[S].send(C, "login", "Hi")
    _, _, ep2 = ep_c.receive(S)
    with pytest.raises(SessionRuntimeError) as e:
        ep_c.receive(S)
    assert e.value.kind is ErrorKind.INVALID_ENDPOINT
    with pytest.raises(SessionRuntimeError) as e:
        ep2.receive(S)  # now it is c's turn to send
    assert e.value.kind is ErrorKind.WRONG_PEER


def test_close_error_taxonomy():
    sess = open_session(oauth(), AsyncBuffered(2))
    with pytest.raises(SessionRuntimeError) as e:
        sess.endpoints[C].close()  # fresh endpoint still owes the protocol
    assert e.value.kind is ErrorKind.PROTOCOL_NOT_FINISHED
    sess2 = open_session(end_(), SyncRendezvous(), roles=(P, Q))
    ep = sess2.endpoints[P]
    ep.close()
    with pytest.raises(SessionRuntimeError) as e:
        ep.close()
    assert e.value.kind is ErrorKind.INVALID_ENDPOINT


def test_receive_timeout_reports_deadlock_kind():
    sess = open_session(oauth(), SyncRendezvous(), timeout=0.05)
    with pytest.raises(SessionRuntimeError) as e:
        sess.endpoints[C].receive(S)
    assert e.value.kind is ErrorKind.TIMEOUT


def test_sibling_stage_exclusivity():
    sess = open_session(g_auth(), AsyncBuffered(2))

    def client():
        ep = sess.endpoints[C]
        ep = ep.send(S, "auth", "tok")
        label, _, ep = ep.receive(S)
        ep.close()

    def server():
        ep = sess.endpoints[S]
        _, _, ep = ep.receive(C)
        ep.send(C, "ok", "fine")
        with pytest.raises(SessionRuntimeError) as e:
            ep.send(C, "cancel", "no")  # sibling label of the same stage
        assert e.value.kind is ErrorKind.INVALID_ENDPOINT

    run_threads(client, server)


def test_recursive_protocol_runs_iterations():
    sess = open_session(calc(), AsyncBuffered(1), monitored=True)

    def client():
        ep = sess.endpoints[C]
        for _ in range(3):
            ep = ep.send(S, "loop", None)
        ep = ep.send(S, "stop", None)
        label, _, ep = ep.receive(S)
        assert label.name == "bye"
        ep.close()

    def server():
        ep = sess.endpoints[S]
        while True:
            label, _, ep = ep.receive(C)
            if label.name == "stop":
                ep = ep.send(C, "bye", None)
                ep.close()
                return

    run_threads(client, server)
    ok, why = sess.monitor.verdict()
    assert ok, why


def test_delegation_roundtrip():
    bye = Label("bye", UNIT)
    inner_g = comm(P, Q, bye, end_())
    handoff = comm(
        Role("owner"), Role("taker"), Label("hand", SessionSort(project(inner_g, Q))), end_()
    )
    inner = open_session(inner_g, SyncRendezvous())
    outer = open_session(handoff, SyncRendezvous())
    owner, taker = Role("owner"), Role("taker")

    def deleg():
        ep = outer.endpoints[owner].send(taker, "hand", inner.endpoints[Q])
        ep.close()

    def take():
        label, live, ep = outer.endpoints[taker].receive(owner)
        ep.close()
        lbl, _, live2 = live.receive(P)
        assert lbl.name == "bye"
        live2.close()

    def inner_p():
        inner.endpoints[P].send(Q, "bye", None).close()

    run_threads(deleg, take, inner_p)


def test_delegation_subtype_enforced():
    wrong = comm(P, Q, Label("other", UNIT), end_())
    expected = comm(P, Q, Label("bye", UNIT), end_())
    handoff = comm(
        Role("owner"), Role("taker"), Label("hand", SessionSort(project(expected, Q))), end_()
    )
    inner = open_session(wrong, SyncRendezvous())
    outer = open_session(handoff, SyncRendezvous())
    with pytest.raises(SessionRuntimeError) as e:
        outer.endpoints[Role("owner")].send(Role("taker"), "hand", inner.endpoints[Q])
    assert e.value.kind is ErrorKind.PAYLOAD_SORT_MISMATCH


def test_delegating_consumed_endpoint_is_invalid():
    bye = Label("bye", UNIT)
    inner_g = comm(Q, P, bye, end_())
    handoff = comm(
        Role("owner"), Role("taker"), Label("hand", SessionSort(project(inner_g, Q))), end_()
    )
    inner = open_session(inner_g, AsyncBuffered(1))
    outer = open_session(handoff, SyncRendezvous())
    consumed = inner.endpoints[Q].send(P, "bye", None)  # old handle is dead
    with pytest.raises(SessionRuntimeError) as e:
        outer.endpoints[Role("owner")].send(Role("taker"), "hand", inner.endpoints[Q])
    assert e.value.kind is ErrorKind.INVALID_ENDPOINT
    del consumed


def test_delegation_unsupported_on_framed():
    bye = Label("bye", UNIT)
    inner_g = comm(P, Q, bye, end_())
    handoff = comm(
        Role("owner"), Role("taker"), Label("hand", SessionSort(project(inner_g, Q))), end_()
    )
    inner = open_session(inner_g, SyncRendezvous())
    outer = open_session(handoff, FramedSocket())
    try:
        with pytest.raises(SessionRuntimeError) as e:
            outer.endpoints[Role("owner")].send(Role("taker"), "hand", inner.endpoints[Q])
        assert e.value.kind is ErrorKind.DELEGATION_UNSUPPORTED
    finally:
        outer.close_transport()


def test_reuse_after_delegation_is_invalid():
    bye = Label("bye", UNIT)
    inner_g = comm(Q, P, bye, end_())
    handoff = comm(
        Role("owner"), Role("taker"), Label("hand", SessionSort(project(inner_g, Q))), end_()
    )
    inner = open_session(inner_g, AsyncBuffered(1))
    outer = open_session(handoff, AsyncBuffered(1))
    owner, taker = Role("owner"), Role("taker")
    delegated = inner.endpoints[Q]
    outer.endpoints[owner].send(taker, "hand", delegated)
    with pytest.raises(SessionRuntimeError) as e:
        delegated.send(P, "bye", None)  # the sender's old handle is dead
    assert e.value.kind is ErrorKind.INVALID_ENDPOINT


def test_framed_transport_full_protocol():
    sess = open_session(g_auth(), FramedSocket(), monitored=True)
    try:
        def client():
            ep = sess.endpoints[C]
            ep = ep.send(S, "auth", "tok")
            label, _, ep = ep.receive(S)
            assert label.name in ("ok", "cancel")
            ep.close()

        def server():
            ep = sess.endpoints[S]
            _, _, ep = ep.receive(C)
            ep = ep.send(C, "ok", "fine")
            ep.close()

        run_threads(client, server)
        ok, why = sess.monitor.verdict()
        assert ok, why
    finally:
        sess.close_transport()


def test_monitor_event_signatures():
    sess = open_session(comm(P, Q, Label("m"), end_()), SyncRendezvous(), monitored=True)

    def p():
        sess.endpoints[P].send(Q, "m", None).close()

    def q():
        _, _, ep = sess.endpoints[Q].receive(P)
        ep.close()

    run_threads(p, q)
    sigs = {e.signature() for e in sess.monitor.events}
    assert ("p", "send", "q", "m") in sigs
    assert ("q", "receive", "p", "m") in sigs
    assert ("p", "close", "", "") in sigs
    assert {e.kind for e in sess.monitor.events} == {
        EventKind.SEND,
        EventKind.RECEIVE,
        EventKind.CLOSE,
    }
