"""Local (channel-vector) types and the two routes that derive them.

A local type describes one role's view of a protocol as directed internal
choices (:class:`Select`), directed external choices (:class:`Branch`),
equi-recursive loops, and termination.  Two independent derivations are
provided and cross-checked by the test suite:

* :func:`type_global` types the whole protocol at once, producing one local
  type per role of the tuple, widening non-deciding roles across choice
  branches by the least-upper-bound merge.
* :func:`project` is the classical per-role endpoint projection with the
  same merge operator.

Subtyping is coinductive: :func:`subtype` carries a set of assumed pairs and
answers positively on revisit, which is sound and complete for the regular
trees denoted by closed guarded types.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .errors import ErrorKind, Path, ProtocolTypeError
from .protocol import (
    ClosedAt,
    Choice,
    Comm,
    End,
    GlobalProtocol,
    Label,
    PayloadSort,
    Rec,
    Role,
    SessionSort,
    Var,
    roles_of,
)


class LocalType:
    __slots__ = ()

    def free_vars(self) -> frozenset[str]:
        return _free_vars(self)


def _canon_branches(branches) -> tuple[tuple[Label, "LocalType"], ...]:
    if isinstance(branches, Mapping):
        items = list(branches.items())
    else:
        items = list(branches)
    items.sort(key=lambda kv: kv[0].name)
    names = [l.name for l, _ in items]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate labels in one choice: {names}")
    if not items:
        raise ValueError("choice types need at least one label")
    return tuple(items)


@dataclass(frozen=True)
class Select(LocalType):
    """Internal choice: this role picks one label to send to ``peer``."""

    peer: Role
    branches: tuple[tuple[Label, LocalType], ...]

    def __post_init__(self):
        object.__setattr__(self, "branches", _canon_branches(self.branches))


@dataclass(frozen=True)
class Branch(LocalType):
    """External choice: ``peer`` picks one label this role must receive."""

    peer: Role
    branches: tuple[tuple[Label, LocalType], ...]

    def __post_init__(self):
        object.__setattr__(self, "branches", _canon_branches(self.branches))


@dataclass(frozen=True)
class RecT(LocalType):
    var: str
    body: LocalType


@dataclass(frozen=True)
class VarT(LocalType):
    var: str


@dataclass(frozen=True)
class EndT(LocalType):
    pass


END_T = EndT()


def select(peer: Role, branches) -> Select:
    return Select(peer, _canon_branches(branches))


def branch(peer: Role, branches) -> Branch:
    return Branch(peer, _canon_branches(branches))


def _free_vars(t: LocalType, bound: frozenset[str] = frozenset()) -> frozenset[str]:
    if isinstance(t, (Select, Branch)):
        out: frozenset[str] = frozenset()
        for _, c in t.branches:
            out |= _free_vars(c, bound)
        return out
    if isinstance(t, RecT):
        return _free_vars(t.body, bound | {t.var})
    if isinstance(t, VarT):
        return frozenset() if t.var in bound else frozenset({t.var})
    return frozenset()


def _subst(t: LocalType, var: str, repl: LocalType) -> LocalType:
    """Capture-avoiding substitution of ``repl`` for ``var`` in ``t``.

    Shadowed binders stop the walk; a binder that would capture a free
    variable of ``repl`` is renamed first (same-named nested recursions are
    legal, so this case is reachable).
    """
    repl_free = _free_vars(repl)

    def go(t: LocalType) -> LocalType:
        if isinstance(t, VarT):
            return repl if t.var == var else t
        if isinstance(t, RecT):
            if t.var == var:  # shadowed
                return t
            if t.var in repl_free and var in _free_vars(t.body):
                fresh = t.var + "'"
                taken = repl_free | _free_vars(t.body)
                while fresh in taken:
                    fresh += "'"
                body = _subst(t.body, t.var, VarT(fresh))
                return RecT(fresh, go(body))
            return RecT(t.var, go(t.body))
        if isinstance(t, Select):
            return Select(t.peer, tuple((l, go(c)) for l, c in t.branches))
        if isinstance(t, Branch):
            return Branch(t.peer, tuple((l, go(c)) for l, c in t.branches))
        return t

    return go(t)


_MAX_UNFOLD = 10_000


def unfold_type(t: LocalType) -> LocalType:
    """Substitute the recursion away until the head is not a Rec."""
    n = 0
    while isinstance(t, RecT):
        t = _subst(t.body, t.var, t)
        n += 1
        if n > _MAX_UNFOLD:
            raise ValueError("recursion is not guarded")
    return t


def _payload_sub(s: PayloadSort, t: PayloadSort, go, flip: bool) -> bool:
    """Payload comparison: base sorts by equality, session sorts recurse.

    ``flip`` is set on the Select side, where the carried channel occurs in
    output position and is therefore contravariant.
    """
    if isinstance(s, SessionSort) and isinstance(t, SessionSort):
        return go(t.local, s.local) if flip else go(s.local, t.local)
    return s == t


def subtype(s: LocalType, t: LocalType) -> bool:
    """Decide the coinductive subtyping relation on closed types.

    Branches widen on the right (a receiver may be offered fewer labels than
    it can handle); Select label sets must match exactly (the sender's menu
    is fixed); recursion is handled equi-recursively.
    """
    assumed: set[tuple[LocalType, LocalType]] = set()

    def go(a: LocalType, b: LocalType) -> bool:
        a = unfold_type(a)
        b = unfold_type(b)
        key = (a, b)
        if key in assumed:
            return True
        assumed.add(key)
        if isinstance(a, EndT) and isinstance(b, EndT):
            return True
        if isinstance(a, Branch) and isinstance(b, Branch):
            if a.peer != b.peer:
                return False
            bb = dict((l.name, (l, c)) for l, c in b.branches)
            for l, c in a.branches:
                if l.name not in bb:
                    return False
                l2, c2 = bb[l.name]
                if not _payload_sub(l.payload, l2.payload, go, flip=False):
                    return False
                if not go(c, c2):
                    return False
            return True
        if isinstance(a, Select) and isinstance(b, Select):
            if a.peer != b.peer:
                return False
            if [l.name for l, _ in a.branches] != [l.name for l, _ in b.branches]:
                return False
            for (l, c), (l2, c2) in zip(a.branches, b.branches):
                if not _payload_sub(l.payload, l2.payload, go, flip=True):
                    return False
                if not go(c, c2):
                    return False
            return True
        return False

    return go(s, t)


def type_equiv(s: LocalType, t: LocalType) -> bool:
    """Equality of the denoted regular trees: mutual subtyping."""
    return subtype(s, t) and subtype(t, s)


class _Namer:
    """Deterministic fresh names for recursion binders introduced by merge."""

    def __init__(self) -> None:
        self.n = 0

    def fresh(self) -> str:
        self.n += 1
        return f"%{self.n}"


def _fix_unused(var: str, body: LocalType) -> LocalType:
    return body if var not in _free_vars(body) else RecT(var, body)


def merge(s: LocalType, t: LocalType, path: Path = (), _namer: Optional[_Namer] = None,
          _memo: Optional[dict] = None) -> LocalType:
    """Least upper bound of two mergeable local types.

    Inputs from the same peer union their label sets (continuations of shared
    labels merge recursively, payloads must agree); outputs merge only when
    peer, labels, and payloads coincide, continuations again merging
    recursively.  Recursion is handled with a memo of in-progress pairs so
    that loops close back on a fresh binder.

    Raises :class:`ProtocolTypeError` when the two behaviours cannot be
    reconciled.
    """
    namer = _namer or _Namer()
    memo: dict[tuple[LocalType, LocalType], str] = {} if _memo is None else _memo

    def fail(kind: ErrorKind, detail: str):
        raise ProtocolTypeError(kind, detail, path)

    def go(a: LocalType, b: LocalType) -> LocalType:
        if isinstance(a, RecT):
            key = (a, b)
            if key in memo:
                return VarT(memo[key])
            z = namer.fresh()
            memo[key] = z
            inner = go(_subst(a.body, a.var, a), b)
            del memo[key]
            return _fix_unused(z, inner)
        if isinstance(b, RecT):
            key = (a, b)
            if key in memo:
                return VarT(memo[key])
            z = namer.fresh()
            memo[key] = z
            inner = go(a, _subst(b.body, b.var, b))
            del memo[key]
            return _fix_unused(z, inner)
        if isinstance(a, EndT) and isinstance(b, EndT):
            return a
        if isinstance(a, VarT) and isinstance(b, VarT):
            if a.var == b.var:
                return a
            fail(ErrorKind.OUTPUT_MERGE_MISMATCH,
                 f"cannot merge distinct recursion variables {a.var} and {b.var}")
        if isinstance(a, Branch) and isinstance(b, Branch):
            if a.peer != b.peer:
                fail(ErrorKind.NON_DIRECTED_INPUT,
                     f"inputs from different peers {a.peer} and {b.peer} cannot be merged")
            right = dict((l.name, (l, c)) for l, c in b.branches)
            out: list[tuple[Label, LocalType]] = []
            for l, c in a.branches:
                if l.name in right:
                    l2, c2 = right.pop(l.name)
                    if l.payload != l2.payload:
                        fail(ErrorKind.PAYLOAD_MISMATCH,
                             f"label {l.name} carries {l.payload.sort_name()} in one branch "
                             f"and {l2.payload.sort_name()} in another")
                    out.append((l, go(c, c2)))
                else:
                    out.append((l, c))
            out.extend(right.values())
            return Branch(a.peer, tuple(out))
        if isinstance(a, Select) and isinstance(b, Select):
            if a.peer != b.peer:
                fail(ErrorKind.NON_DIRECTED_OUTPUT,
                     f"outputs toward different peers {a.peer} and {b.peer} cannot be merged")
            la = [(l.name, l.payload) for l, _ in a.branches]
            lb = [(l.name, l.payload) for l, _ in b.branches]
            if la != lb:
                fail(ErrorKind.OUTPUT_MERGE_MISMATCH,
                     f"output choices toward {a.peer} differ: "
                     f"{[n for n, _ in la]} vs {[n for n, _ in lb]}")
            return Select(a.peer, tuple(
                (l, go(c, c2)) for (l, c), (_, c2) in zip(a.branches, b.branches)
            ))
        fail(ErrorKind.OUTPUT_MERGE_MISMATCH,
             f"behaviours of different shapes cannot be merged: "
             f"{type(a).__name__} vs {type(b).__name__}")

    return go(s, t)


def _decider_select(t: LocalType, at: Role, path: Path) -> Select:
    t = unfold_type(t)
    if not isinstance(t, Select):
        raise ProtocolTypeError(
            ErrorKind.ACTIVE_ROLE_MISMATCH,
            f"deciding role {at} does not start with an output in this branch "
            f"(found {type(t).__name__})",
            path,
        )
    return t


def _concat_outputs(parts: Sequence[Select], at: Role, path: Path) -> Select:
    """Concatenate the deciding role's per-branch outputs into one Select."""
    peer = parts[0].peer
    for i, p in enumerate(parts[1:], start=1):
        if p.peer != peer:
            raise ProtocolTypeError(
                ErrorKind.ACTIVE_ROLE_MISMATCH,
                f"active role mismatch: branch 0 decides toward {peer}, "
                f"branch {i} toward {p.peer}",
                path,
            )
    out: list[tuple[Label, LocalType]] = []
    seen: set[str] = set()
    for p in parts:
        for l, c in p.branches:
            if l.name in seen:
                raise ProtocolTypeError(
                    ErrorKind.DUPLICATE_CHOICE_LABEL,
                    f"label {l.name} is offered by more than one branch of the choice",
                    path,
                )
            seen.add(l.name)
            out.append((l, c))
    return Select(peer, tuple(out))


def type_global(g: GlobalProtocol, roles: Optional[Sequence[Role]] = None) -> dict[Role, LocalType]:
    """Type a global protocol, returning one local type per role.

    ``roles`` overrides the tuple order (defaulting to first-appearance
    order); roles listed but never used type as End.
    """
    tuple_roles = tuple(roles) if roles is not None else roles_of(g)
    participating = {r.name for r in roles_of(g)}
    namer = _Namer()
    n = len(tuple_roles)
    idx = {r.name: i for i, r in enumerate(tuple_roles)}

    def fix_role(var: str, t: LocalType, r: Role, path: Path, closed: frozenset[str]) -> LocalType:
        if isinstance(t, VarT):
            # the loop never touches this role
            if r.name in participating and r.name not in closed:
                raise ProtocolTypeError(
                    ErrorKind.UNCLOSED_ROLE,
                    f"role {r} takes no part in this loop; annotate it with closed_at",
                    path,
                )
            return END_T
        return RecT(var, t) if var in _free_vars(t) else t

    def go(
        node: GlobalProtocol,
        env: dict[str, tuple[LocalType, ...]],
        path: Path,
        closed: frozenset[str],
    ) -> list[LocalType]:
        if isinstance(node, End):
            return [END_T] * n
        if isinstance(node, Comm):
            ts = go(node.cont, env, path + ("cont",), closed)
            i, j = idx[node.from_role.name], idx[node.to_role.name]
            ts[i] = Select(node.to_role, ((node.label, ts[i]),))
            ts[j] = Branch(node.from_role, ((node.label, ts[j]),))
            return ts
        if isinstance(node, Choice):
            per_branch = [
                go(b, env, path + (step,), closed) for step, b in node.children()
            ]
            a = idx[node.at.name]
            outs = [
                _decider_select(ts[a], node.at, path + (f"branch[{k}]",))
                for k, ts in enumerate(per_branch)
            ]
            result = list(per_branch[0])
            result[a] = _concat_outputs(outs, node.at, path)
            for k in range(n):
                if k == a:
                    continue
                acc = per_branch[0][k]
                for ts in per_branch[1:]:
                    acc = merge(acc, ts[k], path, namer)
                result[k] = acc
            return result
        if isinstance(node, Rec):
            fresh = tuple(VarT(f"{node.var}@{i}") for i in range(n))
            env2 = dict(env)
            env2[node.var] = fresh
            ts = go(node.body, env2, path + ("body",), closed)
            return [
                fix_role(f"{node.var}@{i}", ts[i], tuple_roles[i], path, closed)
                for i in range(n)
            ]
        if isinstance(node, Var):
            if node.var not in env:
                raise ProtocolTypeError(
                    ErrorKind.UNBOUND_TYPE_VAR, f"recursion variable {node.var} is unbound", path
                )
            return list(env[node.var])
        if isinstance(node, ClosedAt):
            ts = go(node.cont, env, path + ("cont",), closed | {node.role.name})
            a = idx[node.role.name]
            at = ts[a]
            if not isinstance(at, (EndT, VarT)):
                raise ProtocolTypeError(
                    ErrorKind.UNCLOSED_ROLE,
                    f"closed_at {node.role} contradicts the role's remaining behaviour",
                    path,
                )
            ts[a] = END_T
            return ts
        raise AssertionError(f"unknown node {node!r}")

    ts = go(g, {}, (), frozenset())
    return {r: ts[i] for i, r in enumerate(tuple_roles)}


def project(g: GlobalProtocol, r: Role) -> LocalType:
    """Classical endpoint projection of ``g`` onto role ``r``.

    Senders become Select, receivers Branch, and uninvolved roles merge the
    projections of all branches.  A recursion whose body projects to a bare
    variable collapses to End for roles outside the protocol and is an
    UnclosedRole error for participants (fixed by a closed_at annotation).
    """
    participating = r.name in {x.name for x in roles_of(g)}
    namer = _Namer()

    def go(node: GlobalProtocol, path: Path, closed: bool) -> LocalType:
        if isinstance(node, End):
            return END_T
        if isinstance(node, Comm):
            cont = go(node.cont, path + ("cont",), closed)
            if node.from_role == r:
                return Select(node.to_role, ((node.label, cont),))
            if node.to_role == r:
                return Branch(node.from_role, ((node.label, cont),))
            return cont
        if isinstance(node, Choice):
            parts = [go(b, path + (step,), closed) for step, b in node.children()]
            if node.at == r:
                outs = [
                    _decider_select(p, node.at, path + (f"branch[{k}]",))
                    for k, p in enumerate(parts)
                ]
                return _concat_outputs(outs, node.at, path)
            acc = parts[0]
            for p in parts[1:]:
                acc = merge(acc, p, path, namer)
            return acc
        if isinstance(node, Rec):
            body = go(node.body, path + ("body",), closed)
            if isinstance(body, VarT):
                if participating and not closed:
                    raise ProtocolTypeError(
                        ErrorKind.UNCLOSED_ROLE,
                        f"role {r} takes no part in this loop; annotate it with closed_at",
                        path,
                    )
                return END_T
            return RecT(node.var, body) if node.var in _free_vars(body) else body
        if isinstance(node, Var):
            return VarT(node.var)
        if isinstance(node, ClosedAt):
            cont = go(node.cont, path + ("cont",), closed or node.role == r)
            if node.role == r:
                if not isinstance(cont, (EndT, VarT)):
                    raise ProtocolTypeError(
                        ErrorKind.UNCLOSED_ROLE,
                        f"closed_at {node.role} contradicts the role's remaining behaviour",
                        path,
                    )
                return END_T
            return cont
        raise AssertionError(f"unknown node {node!r}")

    return go(g, (), False)


def sort_to_json(s: PayloadSort):
    if isinstance(s, SessionSort):
        return {"session": local_type_to_json(s.local)}
    return s.sort_name()


def local_type_to_json(t: LocalType):
    """The canonical JSON form used by the CLI and golden tests."""
    if isinstance(t, EndT):
        return "end"
    if isinstance(t, VarT):
        return {"var": t.var}
    if isinstance(t, RecT):
        return {"rec": {"var": t.var, "body": local_type_to_json(t.body)}}
    key = "select" if isinstance(t, Select) else "branch"
    return {
        key: {
            "peer": t.peer.name,
            "branches": {
                l.name: {"payload": sort_to_json(l.payload), "cont": local_type_to_json(c)}
                for l, c in t.branches
            },
        }
    }


def local_type_to_json_str(t: LocalType) -> str:
    return json.dumps(local_type_to_json(t), sort_keys=True, separators=(",", ":"))


def format_local_type(t: LocalType) -> str:
    """Compact human-readable rendering, e.g. ``!s{auth(string): ...}``."""
    if isinstance(t, EndT):
        return "end"
    if isinstance(t, VarT):
        return t.var
    if isinstance(t, RecT):
        return f"rec {t.var} . {format_local_type(t.body)}"
    mark = "!" if isinstance(t, Select) else "?"
    inner = ", ".join(f"{l}: {format_local_type(c)}" for l, c in t.branches)
    return f"{mark}{t.peer}{{{inner}}}"
