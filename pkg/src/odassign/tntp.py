"""Readers and writers for TNTP network, trips and node files, plus the
route-cache format.

Node ids in TNTP files run 1..N; internally node ``i`` is stored at index
``i - 1`` and writers convert back.
"""

from __future__ import annotations

import io
import json
import logging
import math
import os
import re
from pathlib import Path

import numpy as np

from .errors import CacheVersionError, StructuralError, TntpParseError
from .network import DemandMatrix, Network, RouteSet

log = logging.getLogger(__name__)

DEFAULT_B = 0.15
DEFAULT_POWER = 4.0
ROUTE_CACHE_FORMAT = "odassign-routes"
ROUTE_CACHE_VERSION = 1

_META = re.compile(r"^\s*<([^>]+)>(.*)$")
_TRIP = re.compile(r"(\d+)\s*:\s*([^;\s]+)\s*;?")


def _lines(text):
    if hasattr(text, "read"):
        text = text.read()
    return text.splitlines()


def _read_metadata(lines):
    """Consume the ``<KEY> value`` header. Returns (metadata, first body line index)."""
    meta = {}
    for i, raw in enumerate(lines):
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        m = _META.match(line)
        if m is None:
            raise TntpParseError("expected a <KEY> metadata line before <END OF METADATA>",
                                 line=i + 1)
        key = m.group(1).strip().upper()
        if key == "END OF METADATA":
            return meta, i + 1
        meta[key] = (m.group(2).strip(), i + 1)
    raise TntpParseError("missing <END OF METADATA>", line=len(lines))


def _meta_number(meta, key, kind=int, required=True, default=None):
    if key not in meta:
        if required:
            raise TntpParseError(f"missing <{key}> metadata")
        return default
    value, line = meta[key]
    try:
        num = float(value.split()[0])
    except (ValueError, IndexError):
        raise TntpParseError(f"<{key}> is not a number: {value!r}", line=line) from None
    if kind is int:
        if not num.is_integer():
            raise TntpParseError(f"<{key}> must be an integer: {value!r}", line=line)
        return int(num)
    return num


def _fields(raw):
    line = raw.split("~", 1)[0].strip()
    if not line:
        return []
    return line.replace(";", " ").split()


def parse_network(text):
    """Parse a TNTP ``_net`` file into a :class:`Network`."""
    lines = _lines(text)
    meta, start = _read_metadata(lines)
    num_nodes = _meta_number(meta, "NUMBER OF NODES")
    num_links = _meta_number(meta, "NUMBER OF LINKS")
    num_zones = _meta_number(meta, "NUMBER OF ZONES", required=False, default=0)
    first_thru = _meta_number(meta, "FIRST THRU NODE", required=False, default=1)
    cols = {k: [] for k in ("tail", "head", "cap", "length", "t0", "b", "power",
                            "speed", "toll", "type")}
    seen = {}
    for i in range(start, len(lines)):
        toks = _fields(lines[i])
        if not toks:
            continue
        lineno = i + 1
        if len(toks) < 5:
            raise TntpParseError(f"link record has {len(toks)} fields, need at least 5",
                                 line=lineno)
        try:
            init, term = int(toks[0]), int(toks[1])
            vals = [float(t) for t in toks[2:10]]
        except ValueError:
            raise TntpParseError(f"non-numeric link field in {lines[i].strip()!r}",
                                 line=lineno) from None
        vals += [0.0] * (8 - len(vals))
        cap, length, t0, b, power, speed, toll, ltype = vals
        for node in (init, term):
            if not 1 <= node <= num_nodes:
                raise StructuralError(
                    f"line {lineno}: node {node} outside declared range 1..{num_nodes}")
        if (init, term) in seen:
            raise StructuralError(f"line {lineno}: duplicate link {init}->{term} "
                                  f"(first on line {seen[init, term]})")
        seen[init, term] = lineno
        if cap <= 0:
            raise StructuralError(f"line {lineno}: capacity must be positive")
        if t0 < 0:
            raise StructuralError(f"line {lineno}: negative free-flow time")
        cols["tail"].append(init - 1)
        cols["head"].append(term - 1)
        cols["cap"].append(cap)
        cols["length"].append(length)
        cols["t0"].append(t0)
        cols["b"].append(b if b > 0 else DEFAULT_B)
        cols["power"].append(power if power > 0 else DEFAULT_POWER)
        cols["speed"].append(speed)
        cols["toll"].append(toll)
        cols["type"].append(int(ltype))
    if len(cols["tail"]) != num_links:
        raise StructuralError(
            f"<NUMBER OF LINKS> is {num_links} but {len(cols['tail'])} link records found")
    return Network(num_nodes=num_nodes, tail=cols["tail"], head=cols["head"], t0=cols["t0"],
                   capacity=cols["cap"], b=cols["b"], power=cols["power"],
                   node_ids=np.arange(1, num_nodes + 1), num_zones=num_zones,
                   first_thru=max(first_thru - 1, 0), length=cols["length"],
                   speed=cols["speed"], toll=cols["toll"], link_type=cols["type"])


def parse_trips(text, net=None):
    """Parse a TNTP ``_trips`` file.

    Only strictly positive, non-intrazonal entries are kept; agent order is
    file order. ``declared_total`` records ``<TOTAL OD FLOW>`` when present.
    """
    lines = _lines(text)
    meta, start = _read_metadata(lines)
    declared = _meta_number(meta, "TOTAL OD FLOW", kind=float, required=False)
    limit = net.num_nodes if net is not None else None
    origin = None
    origins, dests, flows = [], [], []
    seen = set()
    intrazonal = 0.0
    for i in range(start, len(lines)):
        line = lines[i].split("~", 1)[0].strip()
        if not line:
            continue
        lineno = i + 1
        if line.lower().startswith("origin"):
            parts = line.split()
            try:
                origin = int(parts[1])
            except (IndexError, ValueError):
                raise TntpParseError(f"bad origin line {line!r}", line=lineno) from None
            if limit is not None and not 1 <= origin <= limit:
                raise StructuralError(f"line {lineno}: origin {origin} not in network")
            continue
        entries = _TRIP.findall(line)
        if not entries:
            raise TntpParseError(f"unrecognised trips line {line!r}", line=lineno)
        if origin is None:
            raise TntpParseError("destination entry before any 'Origin' line", line=lineno)
        for d, q in entries:
            d = int(d)
            try:
                q = float(q)
            except ValueError:
                raise TntpParseError(f"non-numeric flow {q!r}", line=lineno) from None
            if not math.isfinite(q) or q < 0:
                raise StructuralError(f"line {lineno}: invalid flow {q!r} for "
                                      f"{origin}->{d}")
            if limit is not None and not 1 <= d <= limit:
                raise StructuralError(f"line {lineno}: destination {d} not in network")
            if q == 0:
                continue
            if d == origin:
                intrazonal += q
                continue
            if (origin, d) in seen:
                raise StructuralError(f"line {lineno}: duplicate OD pair {origin}->{d}")
            seen.add((origin, d))
            origins.append(origin - 1)
            dests.append(d - 1)
            flows.append(q)
    if intrazonal:
        log.warning("dropped %.6g intrazonal trips", intrazonal)
    return DemandMatrix(np.array(origins, dtype=np.int64), np.array(dests, dtype=np.int64),
                        np.array(flows, dtype=np.float64), declared_total=declared)


def parse_node_coords(text, net=None):
    """Parse a node file into ``{node_id: (x, y)}``.

    Lines whose first token is not an integer are headers and skipped.
    """
    coords = {}
    for i, raw in enumerate(_lines(text)):
        toks = _fields(raw)
        if not toks:
            continue
        try:
            node = int(toks[0])
        except ValueError:
            continue
        if len(toks) < 3:
            raise TntpParseError(f"node {node} is missing a coordinate", line=i + 1)
        try:
            x, y = float(toks[1]), float(toks[2])
        except ValueError:
            raise TntpParseError(f"non-numeric coordinate for node {node}",
                                 line=i + 1) from None
        if net is not None and not 1 <= node <= net.num_nodes:
            raise StructuralError(f"line {i + 1}: node {node} not in network")
        coords[node] = (x, y)
    return coords


def _num(v):
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_network(net):
    """Serialize ``net`` in TNTP layout; ``parse_network`` inverts it."""
    out = io.StringIO()
    out.write(f"<NUMBER OF ZONES> {net.num_zones}\n")
    out.write(f"<NUMBER OF NODES> {net.num_nodes}\n")
    out.write(f"<FIRST THRU NODE> {net.first_thru + 1}\n")
    out.write(f"<NUMBER OF LINKS> {net.num_links}\n")
    out.write("<END OF METADATA>\n\n\n")
    out.write("~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower"
              "\tspeed\ttoll\tlink_type\t;\n")
    for e in range(net.num_links):
        row = [net.node_ids[net.tail[e]], net.node_ids[net.head[e]], net.capacity[e],
               net.length[e], net.t0[e], net.b[e], net.power[e], net.speed[e],
               net.toll[e], net.link_type[e]]
        out.write("\t" + "\t".join(_num(v) for v in row) + "\t;\n")
    return out.getvalue()


def format_trips(dm, num_zones=None):
    if num_zones is None:
        num_zones = int(max(dm.origins.max(initial=-1), dm.destinations.max(initial=-1)) + 1)
    out = io.StringIO()
    out.write(f"<NUMBER OF ZONES> {num_zones}\n")
    out.write(f"<TOTAL OD FLOW> {_num(dm.total)}\n")
    out.write("<END OF METADATA>\n\n\n")
    by_origin = {}
    for o, d, q in zip(dm.origins.tolist(), dm.destinations.tolist(), dm.demand.tolist()):
        by_origin.setdefault(o, []).append((d, q))
    for o, entries in by_origin.items():
        out.write(f"Origin \t{o + 1}\n")
        for j in range(0, len(entries), 5):
            chunk = entries[j:j + 5]
            out.write("".join(f"{d + 1:5d} : {_num(q)};" for d, q in chunk) + "\n")
        out.write("\n")
    return out.getvalue()


def format_node_coords(coords):
    lines = ["Node\tX\tY\t;"]
    lines += [f"{n}\t{_num(x)}\t{_num(y)}\t;" for n, (x, y) in sorted(coords.items())]
    return "\n".join(lines) + "\n"


def dumps_routes(rs, net, dm):
    """Route cache text: versioned JSON, one agent per line."""
    head = {"format": ROUTE_CACHE_FORMAT, "version": ROUTE_CACHE_VERSION,
            "network_checksum": net.checksum(), "k": rs.k, "num_agents": rs.num_agents}
    parts = [json.dumps({k: head[k]}, separators=(",", ": "))[1:-1] for k in head]
    agents = []
    for i, routes in enumerate(rs.routes):
        rec = {"origin": int(net.node_ids[dm.origins[i]]),
               "destination": int(net.node_ids[dm.destinations[i]]),
               "routes": [list(r) for r in routes]}
        agents.append(json.dumps(rec, separators=(",", ":")))
    body = ",\n".join(parts) + ',\n"agents": [\n' + ",\n".join(agents) + "\n]"
    return "{\n" + body + "\n}\n"


def loads_routes(text, net, dm):
    """Parse a route cache, refusing other versions or a different network."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TntpParseError(f"route cache is not valid JSON: {exc.msg}", line=exc.lineno) \
            from None
    if doc.get("format") != ROUTE_CACHE_FORMAT:
        raise CacheVersionError(f"not a route cache (format={doc.get('format')!r})")
    if doc.get("version") != ROUTE_CACHE_VERSION:
        raise CacheVersionError(f"route cache version {doc.get('version')!r} is not "
                                f"supported (expected {ROUTE_CACHE_VERSION})")
    if doc.get("network_checksum") != net.checksum():
        raise CacheVersionError("route cache was built for a different network")
    agents = doc["agents"]
    if len(agents) != dm.num_agents:
        raise StructuralError(f"route cache has {len(agents)} agents, demand has "
                              f"{dm.num_agents}")
    routes = []
    for i, rec in enumerate(agents):
        o, d = int(net.node_ids[dm.origins[i]]), int(net.node_ids[dm.destinations[i]])
        if (rec["origin"], rec["destination"]) != (o, d):
            raise StructuralError(f"route cache agent {i} is {rec['origin']}->"
                                  f"{rec['destination']}, demand has {o}->{d}")
        routes.append(tuple(tuple(r) for r in rec["routes"]))
    rs = RouteSet(tuple(routes), k=int(doc["k"]))
    rs.validate(net, dm)
    return rs


def routeset_roundtrip(rs, net, dm):
    return loads_routes(dumps_routes(rs, net, dm), net, dm)


def write_atomic(path, data):
    """Write text or bytes to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    try:
        with open(tmp, mode, **({} if mode == "wb" else {"newline": "\n"})) as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def read_network(path):
    return parse_network(Path(path).read_text())


def read_trips(path, net=None):
    return parse_trips(Path(path).read_text(), net)


def read_node_coords(path, net=None):
    return parse_node_coords(Path(path).read_text(), net)
