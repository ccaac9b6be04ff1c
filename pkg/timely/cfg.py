"""
Timely Control-Flow Graphs

Lowers a labeled function into basic blocks and answers dominance
queries for region inference. Each ``if`` ends its block and opens
then/else/join blocks; atomic regions are transparent; the return label
closes the last body block, which flows into a synthetic exit block.

Dominators and post-dominators come from networkx's iterative
immediate-dominator computation on the block graph and on its reverse.

Classes:
    BasicBlock: One block of labels
    FunctionCFG: Blocks, edges and dominator trees for one function

Functions:
    build_cfg: Lower a function
    closest_common_dom: Lowest block dominating a set of blocks
    closest_common_postdom: Lowest block post-dominating a set of blocks
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import networkx as nx

from .errors import AnalysisError
from .syntax import Atomic, Command, FuncDecl, If, flatten

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class BasicBlock:
    """
    A maximal straight-line run of labels.

    Attributes:
        id (int): Block number, unique within the function
        func (str): Owning function
        labels (List[int]): Labels in execution order
        succs (List[int]): Successor block ids
        preds (List[int]): Predecessor block ids
        kind (str): 'entry', 'then', 'else', 'join' or 'exit'
        branch_label (Optional[int]): Label of the ``if`` that ends this block
        join_of (Optional[int]): For join blocks, label of the ``if`` they close
        return_label (Optional[int]): Set on the block holding the return
    """
    id: int
    func: str
    labels: List[int] = field(default_factory=list)
    succs: List[int] = field(default_factory=list)
    preds: List[int] = field(default_factory=list)
    kind: str = 'entry'
    branch_label: Optional[int] = None
    join_of: Optional[int] = None
    return_label: Optional[int] = None
    owner: Optional['FunctionCFG'] = field(default=None, repr=False)

    def __repr__(self) -> str:
        return f"BasicBlock({self.func}:B{self.id} {self.kind} {self.labels})"


class FunctionCFG:
    """Control-flow graph of one function with its dominator trees."""

    def __init__(self, func: str, blocks: Dict[int, BasicBlock], entry: int, exit: int) -> None:
        self.func = func
        self.blocks = blocks
        self.entry = entry
        self.exit = exit
        self.graph = nx.DiGraph()
        for block in blocks.values():
            block.owner = self
            self.graph.add_node(block.id)
            for succ in block.succs:
                self.graph.add_edge(block.id, succ)
        self.idom: Dict[int, int] = nx.immediate_dominators(self.graph, entry)
        self.ipdom: Dict[int, int] = nx.immediate_dominators(self.graph.reverse(copy=True), exit)
        self._label_block = {label: block for block in blocks.values() for label in block.labels}

    def __iter__(self):
        return iter((self.blocks, self.entry, self.exit))

    def block_of(self, label: int) -> BasicBlock:
        try:
            return self._label_block[label]
        except KeyError:
            raise AnalysisError(f"{self.func} has no label {label}") from None

    def _chain(self, tree: Dict[int, int], block_id: int) -> List[int]:
        chain = [block_id]
        # the root may map to itself or be absent depending on the networkx release
        while tree.get(chain[-1], chain[-1]) != chain[-1]:
            chain.append(tree[chain[-1]])
        return chain

    def dominators(self, block_id: int) -> List[int]:
        """Dominators of a block, itself first and the entry last."""
        return self._chain(self.idom, block_id)

    def postdominators(self, block_id: int) -> List[int]:
        return self._chain(self.ipdom, block_id)

    def dominates(self, a: int, b: int) -> bool:
        return a in self.dominators(b)

    def postdominates(self, a: int, b: int) -> bool:
        return a in self.postdominators(b)

    def _closest(self, tree: Dict[int, int], blocks: Iterable[BasicBlock]) -> BasicBlock:
        ids = [block.id for block in blocks]
        if not ids:
            raise AnalysisError("no blocks given")
        common = None
        for block_id in ids:
            chain = self._chain(tree, block_id)
            common = chain if common is None else [b for b in common if b in chain]
        return self.blocks[common[0]]

    def closest_common_dom(self, blocks: Iterable[BasicBlock]) -> BasicBlock:
        return self._closest(self.idom, blocks)

    def closest_common_postdom(self, blocks: Iterable[BasicBlock]) -> BasicBlock:
        return self._closest(self.ipdom, blocks)

    def to_dot(self) -> str:
        """Graphviz DOT text for debugging."""
        lines = [f'digraph "{self.func}" {{', '  node [shape=box];']
        for block in self.blocks.values():
            labels = ' '.join(str(label) for label in block.labels)
            lines.append(f'  B{block.id} [label="B{block.id} {block.kind}\\n{labels}"];')
        for block in self.blocks.values():
            for succ in block.succs:
                lines.append(f'  B{block.id} -> B{succ};')
        lines.append('}')
        return '\n'.join(lines)


class _Builder:
    def __init__(self, func: FuncDecl) -> None:
        self.func = func
        self.blocks: Dict[int, BasicBlock] = {}

    def new_block(self, kind: str) -> BasicBlock:
        block = BasicBlock(id=len(self.blocks), func=self.func.name, kind=kind)
        self.blocks[block.id] = block
        return block

    @staticmethod
    def edge(src: BasicBlock, dst: BasicBlock) -> None:
        src.succs.append(dst.id)
        dst.preds.append(src.id)

    def lower(self, cmd: Optional[Command], current: BasicBlock) -> BasicBlock:
        for stmt in flatten(cmd):
            current.labels.append(stmt.label)
            if isinstance(stmt, If):
                current.branch_label = stmt.label
                then_block = self.new_block('then')
                self.edge(current, then_block)
                then_end = self.lower(stmt.then, then_block)
                else_block = self.new_block('else')
                self.edge(current, else_block)
                else_end = self.lower(stmt.els, else_block)
                join = self.new_block('join')
                join.join_of = stmt.label
                self.edge(then_end, join)
                self.edge(else_end, join)
                current = join
            elif isinstance(stmt, Atomic):
                current = self.lower(stmt.body, current)
        return current

    def build(self) -> FunctionCFG:
        entry = self.new_block('entry')
        last = self.lower(self.func.body, entry)
        last.labels.append(self.func.ret_label)
        last.return_label = self.func.ret_label
        exit_block = self.new_block('exit')
        self.edge(last, exit_block)
        return FunctionCFG(self.func.name, self.blocks, entry.id, exit_block.id)


def build_cfg(func: FuncDecl) -> FunctionCFG:
    """
    Lower a labeled function into basic blocks.

    Args:
        func: Labeled function declaration

    Returns:
        FunctionCFG: Unpacks as (blocks, entry, exit)
    """
    cfg = _Builder(func).build()
    logger.debug("CFG for %s: %d blocks", func.name, len(cfg.blocks))
    return cfg


def _owner(blocks: Iterable[BasicBlock]) -> FunctionCFG:
    owners = {id(block.owner): block.owner for block in blocks}
    if len(owners) != 1:
        raise AnalysisError("blocks span multiple functions")
    return next(iter(owners.values()))


def closest_common_dom(blocks: Iterable[BasicBlock]) -> BasicBlock:
    """Lowest block that dominates every given block."""
    blocks = list(blocks)
    return _owner(blocks).closest_common_dom(blocks)


def closest_common_postdom(blocks: Iterable[BasicBlock]) -> BasicBlock:
    """Lowest block that post-dominates every given block."""
    blocks = list(blocks)
    return _owner(blocks).closest_common_postdom(blocks)
