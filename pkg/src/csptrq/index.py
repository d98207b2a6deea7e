"""In-memory R-tree (Guttman, quadratic split) with node-read counting.

Two trees make up the twin index: one over the 2tau squares of moving
objects, one over the bounding rectangles of restricted areas.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

from .geometry import Mbr
from .model import MovingObject, RestrictedArea

DEFAULT_FANOUT = 50


class IndexCorruption(AssertionError):
    pass


@dataclass
class AccessCounters:
    """I/O proxy: R-tree nodes visited and records materialised."""

    node_reads: int = 0
    record_fetches: int = 0

    @property
    def total(self) -> int:
        return self.node_reads + self.record_fetches

    def reset(self) -> None:
        self.node_reads = 0
        self.record_fetches = 0

    def copy(self) -> AccessCounters:
        return AccessCounters(self.node_reads, self.record_fetches)


class _Node:
    __slots__ = ("leaf", "boxes", "children", "parent")

    def __init__(self, leaf: bool):
        self.leaf = leaf
        self.boxes: list[Mbr] = []
        self.children: list = []
        self.parent: _Node | None = None

    def cover(self) -> Mbr:
        b = self.boxes
        return Mbr(
            min(x[0] for x in b),
            min(x[1] for x in b),
            max(x[2] for x in b),
            max(x[3] for x in b),
        )


def _union(a: Mbr, b: Mbr) -> Mbr:
    return Mbr(min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


def _area(a: Mbr) -> float:
    return (a[2] - a[0]) * (a[3] - a[1])


class RTree:
    def __init__(self, fanout: int = DEFAULT_FANOUT, min_fill: int | None = None):
        if fanout < 4:
            raise ValueError("fanout must be at least 4")
        self.fanout = fanout
        self.min_fill = min_fill if min_fill is not None else max(2, (fanout * 2) // 5)
        if not 1 <= self.min_fill <= fanout // 2:
            raise ValueError("min_fill must lie in [1, fanout/2]")
        self.root = _Node(leaf=True)
        self._leaf_of: dict[Hashable, _Node] = {}
        self._box_of: dict[Hashable, Mbr] = {}

    def __len__(self) -> int:
        return len(self._box_of)

    def __contains__(self, key: Hashable) -> bool:
        return key in self._box_of

    def box(self, key: Hashable) -> Mbr:
        return self._box_of[key]

    @property
    def height(self) -> int:
        h, node = 1, self.root
        while not node.leaf:
            node = node.children[0]
            h += 1
        return h

    # -- queries -----------------------------------------------------------

    def search(self, window: Sequence[float], counters: AccessCounters | None = None) -> list:
        """Record ids whose rectangle intersects ``window`` (closed rectangles)."""
        wx0, wy0, wx1, wy1 = window
        out = []
        if not self._box_of:
            return out
        stack = [self.root]
        reads = 0
        while stack:
            node = stack.pop()
            reads += 1
            for b, child in zip(node.boxes, node.children):
                if b[0] <= wx1 and wx0 <= b[2] and b[1] <= wy1 and wy0 <= b[3]:
                    if node.leaf:
                        out.append(child)
                    else:
                        stack.append(child)
        if counters is not None:
            counters.node_reads += reads
        return out

    # -- updates -----------------------------------------------------------

    def insert(self, key: Hashable, box: Sequence[float]) -> None:
        if key in self._box_of:
            raise KeyError(f"duplicate record id {key!r}")
        box = Mbr(*box)
        if box.xmin > box.xmax or box.ymin > box.ymax:
            raise ValueError(f"malformed rectangle {box}")
        self._box_of[key] = box
        leaf = self._choose_leaf(box)
        self._add_entry(leaf, box, key)

    def delete(self, key: Hashable) -> None:
        if key not in self._box_of:
            raise KeyError(f"record {key!r} not indexed")
        leaf = self._leaf_of.pop(key)
        del self._box_of[key]
        i = leaf.children.index(key)
        del leaf.boxes[i]
        del leaf.children[i]
        self._condense(leaf)

    def update(self, key: Hashable, box: Sequence[float]) -> None:
        self.delete(key)
        self.insert(key, box)

    def _choose_leaf(self, box: Mbr) -> _Node:
        node = self.root
        while not node.leaf:
            best, best_grow, best_area = 0, None, None
            for i, b in enumerate(node.boxes):
                a = _area(b)
                grow = _area(_union(b, box)) - a
                if best_grow is None or grow < best_grow or (grow == best_grow and a < best_area):
                    best, best_grow, best_area = i, grow, a
            node = node.children[best]
        return node

    def _add_entry(self, node: _Node, box: Mbr, child) -> None:
        node.boxes.append(box)
        node.children.append(child)
        if node.leaf:
            self._leaf_of[child] = node
        else:
            child.parent = node
        if len(node.boxes) > self.fanout:
            self._split(node)
        else:
            self._enlarge_up(node, box)

    def _enlarge_up(self, node: _Node, box: Mbr) -> None:
        while node.parent is not None:
            parent = node.parent
            i = parent.children.index(node)
            old = parent.boxes[i]
            new = _union(old, box)
            if new == old:
                return
            parent.boxes[i] = new
            node = parent

    def _tighten_up(self, node: _Node) -> None:
        while node.parent is not None:
            parent = node.parent
            i = parent.children.index(node)
            tight = node.cover()
            if parent.boxes[i] == tight:
                return
            parent.boxes[i] = tight
            node = parent

    def _split(self, node: _Node) -> None:
        group_a, group_b = self._quadratic_split(list(zip(node.boxes, node.children)))
        sibling = _Node(node.leaf)
        node.boxes = [b for b, _ in group_a]
        node.children = [c for _, c in group_a]
        sibling.boxes = [b for b, _ in group_b]
        sibling.children = [c for _, c in group_b]
        for n in (node, sibling):
            for c in n.children:
                if n.leaf:
                    self._leaf_of[c] = n
                else:
                    c.parent = n
        if node.parent is None:
            root = _Node(leaf=False)
            root.boxes = [node.cover(), sibling.cover()]
            root.children = [node, sibling]
            node.parent = sibling.parent = root
            self.root = root
            return
        parent = node.parent
        i = parent.children.index(node)
        parent.boxes[i] = node.cover()
        self._tighten_up(parent)
        self._add_entry(parent, sibling.cover(), sibling)

    def _quadratic_split(self, entries: list) -> tuple[list, list]:
        worst, seeds = -1.0, (0, 1)
        for i in range(len(entries)):
            bi = entries[i][0]
            ai = _area(bi)
            for j in range(i + 1, len(entries)):
                bj = entries[j][0]
                d = _area(_union(bi, bj)) - ai - _area(bj)
                if d > worst:
                    worst, seeds = d, (i, j)
        a = [entries[seeds[0]]]
        b = [entries[seeds[1]]]
        box_a, box_b = a[0][0], b[0][0]
        rest = [e for k, e in enumerate(entries) if k not in seeds]
        m = self.min_fill
        while rest:
            if len(a) + len(rest) == m:
                a.extend(rest)
                break
            if len(b) + len(rest) == m:
                b.extend(rest)
                break
            pick, pick_diff = 0, -1.0
            area_a, area_b = _area(box_a), _area(box_b)
            for k, (bx, _) in enumerate(rest):
                diff = abs((_area(_union(box_a, bx)) - area_a) - (_area(_union(box_b, bx)) - area_b))
                if diff > pick_diff:
                    pick, pick_diff = k, diff
            entry = rest.pop(pick)
            bx = entry[0]
            grow_a = _area(_union(box_a, bx)) - area_a
            grow_b = _area(_union(box_b, bx)) - area_b
            if (grow_a, area_a, len(a)) <= (grow_b, area_b, len(b)):
                a.append(entry)
                box_a = _union(box_a, bx)
            else:
                b.append(entry)
                box_b = _union(box_b, bx)
        return a, b

    def _condense(self, node: _Node) -> None:
        orphans: list[tuple[Mbr, Hashable]] = []
        while node.parent is not None:
            parent = node.parent
            i = parent.children.index(node)
            if len(node.boxes) < self.min_fill:
                del parent.boxes[i]
                del parent.children[i]
                orphans.extend(self._records_under(node))
            else:
                parent.boxes[i] = node.cover()
            node = parent
        if not self.root.leaf and len(self.root.children) == 1:
            self.root = self.root.children[0]
            self.root.parent = None
        if not self.root.leaf and not self.root.children:
            self.root = _Node(leaf=True)
        for box, key in orphans:
            self._leaf_of.pop(key, None)
            del self._box_of[key]
        for box, key in orphans:
            self.insert(key, box)

    def _records_under(self, node: _Node) -> list:
        if node.leaf:
            return list(zip(node.boxes, node.children))
        out = []
        for c in node.children:
            out.extend(self._records_under(c))
        return out

    # -- structure check ---------------------------------------------------

    def validate(self) -> None:
        """Raise IndexCorruption unless every structural invariant holds."""
        seen: dict = {}
        leaf_depths: set[int] = set()

        def walk(node: _Node, depth: int, parent_box: Mbr | None) -> None:
            if len(node.boxes) != len(node.children):
                raise IndexCorruption("box/child count mismatch")
            if len(node.boxes) > self.fanout:
                raise IndexCorruption(f"node holds {len(node.boxes)} > {self.fanout} entries")
            if node is not self.root and len(node.boxes) < self.min_fill:
                raise IndexCorruption("underfull non-root node")
            if parent_box is not None and node.boxes and node.cover() != parent_box:
                raise IndexCorruption("parent rectangle is not the tight cover of its child")
            if node.leaf:
                leaf_depths.add(depth)
                for b, key in zip(node.boxes, node.children):
                    if key in seen:
                        raise IndexCorruption(f"record {key!r} stored twice")
                    seen[key] = b
                    if self._box_of.get(key) != b:
                        raise IndexCorruption(f"record {key!r} rectangle is stale")
                    if self._leaf_of.get(key) is not node:
                        raise IndexCorruption(f"record {key!r} leaf pointer is stale")
            else:
                for b, child in zip(node.boxes, node.children):
                    if child.parent is not node:
                        raise IndexCorruption("broken parent pointer")
                    if not Mbr(*b).contains(child.cover()):
                        raise IndexCorruption("child rectangle escapes its parent entry")
                    walk(child, depth + 1, b)

        if self.root.parent is not None:
            raise IndexCorruption("root has a parent")
        walk(self.root, 0, None)
        if len(leaf_depths) > 1:
            raise IndexCorruption(f"leaves at different depths {sorted(leaf_depths)}")
        if len(seen) != len(self._box_of):
            raise IndexCorruption("record count mismatch")


def build_object_index(objects: Iterable[MovingObject], fanout: int = DEFAULT_FANOUT) -> RTree:
    tree = RTree(fanout)
    for o in objects:
        tree.insert(o.id, o.square)
    return tree


def build_area_index(areas: Iterable[RestrictedArea], fanout: int = DEFAULT_FANOUT) -> RTree:
    tree = RTree(fanout)
    for r in areas:
        tree.insert(r.id, r.mbr)
    return tree


def candidates_objects(tree: RTree, window: Mbr, counters: AccessCounters | None = None) -> list:
    """Ids of objects whose index square meets the query rectangle, ascending."""
    return sorted(tree.search(window, counters))


def candidates_areas(tree: RTree, window: Mbr, counters: AccessCounters | None = None) -> list:
    return sorted(tree.search(window, counters))


def update_object(tree: RTree, key: Hashable, location: Sequence[float]) -> None:
    """Re-centre an object's square on a new recorded location, keeping its size."""
    if key not in tree:
        raise KeyError(f"object {key!r} not indexed")
    old = tree.box(key)
    half = (old.xmax - old.xmin) / 2.0
    tree.update(key, Mbr.square(location, half))
