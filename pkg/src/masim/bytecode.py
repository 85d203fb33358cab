"""Agent bytecode: instruction set, assembler, decoder, and interpreter.

Agents are programs for a small stack machine: 32-bit unsigned wrapping
arithmetic, a 256-value stack, 256 memory slots, and a FIFO input queue.
Three instructions (SEND, READRES, WRITERES) talk to the hosting platform,
MIGRATE moves the agent to another platform, and JMPZ gives programs
input-dependent control flow.  Every executed instruction produces exactly
one trace entry, which is what makes per-hop traces replayable and
verifiable after the fact.
"""

from __future__ import annotations

import hashlib
import struct
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

HALT = 0x00
PUSH = 0x01
ADD = 0x02
SUB = 0x03
LOAD = 0x04
STORE = 0x05
SEND = 0x06
RECV = 0x07
READRES = 0x08
WRITERES = 0x09
MIGRATE = 0x0A
JMPZ = 0x0B

MNEMONICS = {
    HALT: "HALT",
    PUSH: "PUSH",
    ADD: "ADD",
    SUB: "SUB",
    LOAD: "LOAD",
    STORE: "STORE",
    SEND: "SEND",
    RECV: "RECV",
    READRES: "READRES",
    WRITERES: "WRITERES",
    MIGRATE: "MIGRATE",
    JMPZ: "JMPZ",
}
OPCODES = {name: op for op, name in MNEMONICS.items()}

MAX_CODE_SIZE = 64 * 1024
STACK_LIMIT = 256
MEMORY_SLOTS = 256
WORD_MASK = 0xFFFFFFFF

INPUT_OPCODES = (RECV, READRES)


class DecodeError(ValueError):
    """Raised when a byte sequence is not a valid program."""

    def __init__(self, msg: str, offset: int = 0):
        super().__init__(msg)
        self.offset = offset


class UnknownOpcode(DecodeError):
    pass


class TruncatedOperand(DecodeError):
    pass


class ProgramTooLarge(DecodeError):
    pass


class AssemblyError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction.

    Field use depends on the opcode: `a` holds a slot, resource id, SEND
    target, or MIGRATE platform index; `b` holds the SEND kind; `imm` holds
    the PUSH immediate or the signed JMPZ byte offset.  `jump_index` is the
    JMPZ target resolved to an instruction index at decode time (-1 when
    the offset does not land on an instruction boundary).
    """

    opcode: int
    a: int = 0
    b: int = 0
    imm: int = 0
    payload: bytes = b""
    offset: int = 0
    size: int = 1
    jump_index: int = -1


@dataclass(frozen=True)
class Program:
    code: bytes
    instructions: tuple[Instruction, ...]
    offset_index: dict[int, int]
    code_digest: bytes

    def __len__(self) -> int:
        return len(self.instructions)


@dataclass(frozen=True)
class TraceEntry:
    """What one executed statement records: its position and any consumed input."""

    seq: int
    pc: int
    opcode: int
    input_flag: int
    input_value: int


@dataclass(frozen=True)
class Request:
    """A platform-mediated action as a (kind, target, payload) triple.

    SEND uses its kind/target operands and immediate payload; READRES and
    WRITERES use their own opcode as the kind and the resource id as the
    target, so every request normalizes to one byte-string family.
    """

    op: int
    kind: int
    target: int
    payload: bytes = b""


@dataclass
class AgentState:
    pc: int = 0
    stack: list[int] = field(default_factory=list)
    memory: list[int] = field(default_factory=lambda: [0] * MEMORY_SLOTS)
    input_queue: deque[int] = field(default_factory=deque)
    steps_executed: int = 0

    def clone(self) -> "AgentState":
        return AgentState(
            pc=self.pc,
            stack=list(self.stack),
            memory=list(self.memory),
            input_queue=deque(self.input_queue),
            steps_executed=self.steps_executed,
        )


def encode_state(state: AgentState) -> bytes:
    """Canonical state encoding: pc, stack (depth then bottom-up values),
    all 256 memory slots, then the input queue front-to-back.  All fields
    big-endian."""
    parts = [struct.pack(">IH", state.pc, len(state.stack))]
    parts.extend(struct.pack(">I", v) for v in state.stack)
    parts.append(struct.pack(">" + "I" * MEMORY_SLOTS, *state.memory))
    parts.append(struct.pack(">H", len(state.input_queue)))
    parts.extend(struct.pack(">I", v) for v in state.input_queue)
    return b"".join(parts)


def decode_state(data: bytes) -> AgentState:
    if len(data) < 6:
        raise ValueError("state encoding truncated")
    pc, depth = struct.unpack_from(">IH", data, 0)
    off = 6
    need = depth * 4 + MEMORY_SLOTS * 4 + 2
    if len(data) < off + need:
        raise ValueError("state encoding truncated")
    stack = list(struct.unpack_from(">" + "I" * depth, data, off))
    off += depth * 4
    memory = list(struct.unpack_from(">" + "I" * MEMORY_SLOTS, data, off))
    off += MEMORY_SLOTS * 4
    (qlen,) = struct.unpack_from(">H", data, off)
    off += 2
    if len(data) != off + qlen * 4:
        raise ValueError("state encoding length mismatch")
    queue = deque(struct.unpack_from(">" + "I" * qlen, data, off))
    return AgentState(pc=pc, stack=stack, memory=memory, input_queue=queue)


def state_digest(state: AgentState) -> bytes:
    return hashlib.sha256(encode_state(state)).digest()


class OutcomeKind(Enum):
    CONTINUE = "CONTINUE"
    HALTED = "HALTED"
    BLOCKED = "BLOCKED"
    MIGRATING = "MIGRATING"
    REQUEST = "REQUEST"
    FAULT = "FAULT"


class FaultReason(Enum):
    STACK_OVERFLOW = "STACK_OVERFLOW"
    STACK_UNDERFLOW = "STACK_UNDERFLOW"
    PC_OUT_OF_RANGE = "PC_OUT_OF_RANGE"
    BAD_SLOT = "BAD_SLOT"  # unreachable with 1-byte slots over 256 slots; reserved
    QUOTA_EXCEEDED = "QUOTA_EXCEEDED"


@dataclass(frozen=True)
class StepOutcome:
    kind: OutcomeKind
    target: int = 0
    request: Request | None = None
    fault: FaultReason | None = None

    def label(self) -> str:
        if self.kind is OutcomeKind.FAULT:
            return f"FAULT:{self.fault.value}"
        return self.kind.value


CONTINUE = StepOutcome(OutcomeKind.CONTINUE)
HALTED = StepOutcome(OutcomeKind.HALTED)
BLOCKED = StepOutcome(OutcomeKind.BLOCKED)


class Env:
    """External-input provider and request sink.

    `handle` is called for every SEND/READRES/WRITERES during the step that
    emits it; the return value (masked to 32 bits) is pushed for READRES
    and ignored otherwise.
    """

    def handle(self, request: Request) -> int | None:
        return 0


class ScriptedEnv(Env):
    """Test env: answers READRES from a scripted list and records requests."""

    def __init__(self, read_values: list[int] | None = None):
        self.read_values = list(read_values or [])
        self.requests: list[Request] = []

    def handle(self, request: Request) -> int | None:
        self.requests.append(request)
        if request.op == READRES:
            return self.read_values.pop(0) if self.read_values else 0
        return None


_OPERAND_SIZES = {
    HALT: 0, PUSH: 4, ADD: 0, SUB: 0, LOAD: 1, STORE: 1,
    RECV: 0, READRES: 1, WRITERES: 1, MIGRATE: 1, JMPZ: 2,
}


def decode_program(code: bytes) -> Program:
    """Decode raw bytes into an instruction list with a byte-offset map.

    JMPZ offsets are relative to the byte offset of the following
    instruction and are resolved to instruction indexes here; a target of
    exactly len(code) maps to the one-past-the-end pc.
    """
    if len(code) > MAX_CODE_SIZE:
        raise ProgramTooLarge(f"program is {len(code)} bytes (max {MAX_CODE_SIZE})")
    raw: list[tuple[int, int, int, int, bytes, int]] = []  # op, a, b, imm, payload, offset
    offset_index: dict[int, int] = {}
    off = 0
    while off < len(code):
        op = code[off]
        offset_index[off] = len(raw)
        if op == SEND:
            if off + 4 > len(code):
                raise TruncatedOperand(f"SEND header truncated at offset {off}", off)
            target, kind, plen = code[off + 1], code[off + 2], code[off + 3]
            if off + 4 + plen > len(code):
                raise TruncatedOperand(f"SEND payload truncated at offset {off}", off)
            payload = bytes(code[off + 4:off + 4 + plen])
            raw.append((op, target, kind, 0, payload, off))
            off += 4 + plen
            continue
        if op not in _OPERAND_SIZES:
            raise UnknownOpcode(f"unknown opcode 0x{op:02X} at offset {off}", off)
        size = _OPERAND_SIZES[op]
        if off + 1 + size > len(code):
            raise TruncatedOperand(f"{MNEMONICS[op]} operand truncated at offset {off}", off)
        a = b = imm = 0
        if op == PUSH:
            (imm,) = struct.unpack_from(">I", code, off + 1)
        elif op == JMPZ:
            (imm,) = struct.unpack_from(">h", code, off + 1)
        elif size == 1:
            a = code[off + 1]
        raw.append((op, a, b, imm, b"", off))
        off += 1 + size

    instructions = []
    for idx, (op, a, b, imm, payload, ioff) in enumerate(raw):
        size = len(code[ioff:]) if idx == len(raw) - 1 else raw[idx + 1][5] - ioff
        jump_index = -1
        if op == JMPZ:
            target_off = ioff + size + imm
            if target_off == len(code):
                jump_index = len(raw)
            else:
                jump_index = offset_index.get(target_off, -1)
        instructions.append(Instruction(op, a, b, imm, payload, ioff, size, jump_index))
    return Program(
        code=bytes(code),
        instructions=tuple(instructions),
        offset_index=offset_index,
        code_digest=hashlib.sha256(code).digest(),
    )


def assemble(text: str) -> bytes:
    """Assemble one-mnemonic-per-line text (decimal operands, `#` comments).

    SEND takes target, kind, then zero or more payload byte values; the
    payload length is inferred.  JMPZ takes a signed byte offset relative
    to the next instruction.
    """
    out = bytearray()
    for lineno, rawline in enumerate(text.splitlines(), 1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        name = parts[0].upper()
        if name not in OPCODES:
            raise AssemblyError(lineno, f"unknown mnemonic {parts[0]!r}")
        op = OPCODES[name]
        try:
            args = [int(p) for p in parts[1:]]
        except ValueError:
            raise AssemblyError(lineno, "operands must be decimal integers") from None
        if op == SEND:
            if len(args) < 2:
                raise AssemblyError(lineno, "SEND needs target and kind")
            target, kind, payload = args[0], args[1], args[2:]
            if not (0 <= target <= 255 and 0 <= kind <= 255):
                raise AssemblyError(lineno, "SEND target/kind out of range")
            if len(payload) > 255 or any(not 0 <= v <= 255 for v in payload):
                raise AssemblyError(lineno, "SEND payload must be <=255 byte values")
            out += bytes([op, target, kind, len(payload)]) + bytes(payload)
            continue
        want = 1 if _OPERAND_SIZES[op] else 0
        if op == PUSH or op == JMPZ:
            want = 1
        if len(args) != want:
            raise AssemblyError(lineno, f"{name} takes {want} operand(s)")
        if op == PUSH:
            if not 0 <= args[0] <= WORD_MASK:
                raise AssemblyError(lineno, "PUSH immediate out of range")
            out += bytes([op]) + struct.pack(">I", args[0])
        elif op == JMPZ:
            if not -32768 <= args[0] <= 32767:
                raise AssemblyError(lineno, "JMPZ offset out of range")
            out += bytes([op]) + struct.pack(">h", args[0])
        elif want:
            if not 0 <= args[0] <= 255:
                raise AssemblyError(lineno, f"{name} operand out of range")
            out += bytes([op, args[0]])
        else:
            out += bytes([op])
    if len(out) > MAX_CODE_SIZE:
        raise AssemblyError(0, f"program is {len(out)} bytes (max {MAX_CODE_SIZE})")
    return bytes(out)


def step(state: AgentState, program: Program, env: Env) -> tuple[StepOutcome, TraceEntry | None]:
    """Execute exactly one instruction.

    Returns the outcome and the trace entry for the executed statement.
    A RECV on an empty queue blocks without mutating anything and yields
    no entry (the statement did not execute); a fault still records its
    entry.  A pc outside the program faults without an entry, since there
    is no statement to identify.
    """
    pc = state.pc
    instrs = program.instructions
    if pc < 0 or pc >= len(instrs):
        return StepOutcome(OutcomeKind.FAULT, fault=FaultReason.PC_OUT_OF_RANGE), None
    ins = instrs[pc]
    op = ins.opcode
    stack = state.stack
    seq = state.steps_executed
    flag = 0
    value = 0
    outcome = CONTINUE

    if op == HALT:
        outcome = HALTED
    elif op == PUSH:
        if len(stack) >= STACK_LIMIT:
            return _fault(state, seq, pc, op, FaultReason.STACK_OVERFLOW)
        stack.append(ins.imm)
        state.pc = pc + 1
    elif op == ADD or op == SUB:
        if len(stack) < 2:
            return _fault(state, seq, pc, op, FaultReason.STACK_UNDERFLOW)
        b = stack.pop()
        a = stack.pop()
        stack.append((a + b) & WORD_MASK if op == ADD else (a - b) & WORD_MASK)
        state.pc = pc + 1
    elif op == LOAD:
        if len(stack) >= STACK_LIMIT:
            return _fault(state, seq, pc, op, FaultReason.STACK_OVERFLOW)
        stack.append(state.memory[ins.a])
        state.pc = pc + 1
    elif op == STORE:
        if not stack:
            return _fault(state, seq, pc, op, FaultReason.STACK_UNDERFLOW)
        state.memory[ins.a] = stack.pop()
        state.pc = pc + 1
    elif op == SEND:
        req = Request(SEND, kind=ins.b, target=ins.a, payload=ins.payload)
        env.handle(req)
        outcome = StepOutcome(OutcomeKind.REQUEST, request=req)
        state.pc = pc + 1
    elif op == RECV:
        if not state.input_queue:
            return BLOCKED, None
        if len(stack) >= STACK_LIMIT:
            return _fault(state, seq, pc, op, FaultReason.STACK_OVERFLOW)
        value = state.input_queue.popleft()
        stack.append(value)
        flag = 1
        state.pc = pc + 1
    elif op == READRES:
        if len(stack) >= STACK_LIMIT:
            return _fault(state, seq, pc, op, FaultReason.STACK_OVERFLOW)
        req = Request(READRES, kind=READRES, target=ins.a)
        got = env.handle(req)
        value = (got or 0) & WORD_MASK
        stack.append(value)
        flag = 1
        outcome = StepOutcome(OutcomeKind.REQUEST, request=req)
        state.pc = pc + 1
    elif op == WRITERES:
        if not stack:
            return _fault(state, seq, pc, op, FaultReason.STACK_UNDERFLOW)
        v = stack.pop()
        req = Request(WRITERES, kind=WRITERES, target=ins.a, payload=struct.pack(">I", v))
        env.handle(req)
        outcome = StepOutcome(OutcomeKind.REQUEST, request=req)
        state.pc = pc + 1
    elif op == MIGRATE:
        outcome = StepOutcome(OutcomeKind.MIGRATING, target=ins.a)
        state.pc = pc + 1
    elif op == JMPZ:
        if not stack:
            return _fault(state, seq, pc, op, FaultReason.STACK_UNDERFLOW)
        v = stack.pop()
        if v == 0:
            if ins.jump_index < 0:
                return _fault(state, seq, pc, op, FaultReason.PC_OUT_OF_RANGE)
            state.pc = ins.jump_index
        else:
            state.pc = pc + 1

    state.steps_executed = seq + 1
    return outcome, TraceEntry(seq, pc, op, flag, value)


def _fault(state: AgentState, seq: int, pc: int, op: int, reason: FaultReason):
    state.steps_executed = seq + 1
    return StepOutcome(OutcomeKind.FAULT, fault=reason), TraceEntry(seq, pc, op, 0, 0)


_TERMINAL = (OutcomeKind.HALTED, OutcomeKind.BLOCKED, OutcomeKind.MIGRATING, OutcomeKind.FAULT)


def run_steps(
    state: AgentState,
    program: Program,
    env: Env,
    max_steps: int,
    entries: list[TraceEntry] | None = None,
) -> tuple[StepOutcome | None, list[TraceEntry]]:
    """Run up to max_steps instructions, appending trace entries.

    Returns the terminal outcome, or None when the step budget ran out
    with the agent still runnable.
    """
    if entries is None:
        entries = []
    executed = 0
    while executed < max_steps:
        outcome, entry = step(state, program, env)
        if entry is not None:
            entries.append(entry)
            executed += 1
        if outcome.kind in _TERMINAL:
            return outcome, entries
    return None, entries


def execute(
    state: AgentState,
    program: Program,
    env: Env,
    step_limit: int,
) -> tuple[AgentState, list[TraceEntry], StepOutcome]:
    """Run until the program halts, migrates, blocks, faults, or the step
    limit is reached; hitting the limit is a QUOTA_EXCEEDED fault."""
    if step_limit < 1:
        raise ValueError("step_limit must be >= 1")
    outcome, entries = run_steps(state, program, env, step_limit)
    if outcome is None:
        outcome = StepOutcome(OutcomeKind.FAULT, fault=FaultReason.QUOTA_EXCEEDED)
    return state, entries, outcome
