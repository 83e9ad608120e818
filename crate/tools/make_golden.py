"""Regenerate the golden disassembly corpus.

Bytecodes are solc runtime outputs shipped with web3.py's test contract data.
Listings come from pyevmasm, adjusted where its table lags the current fork.
"""

import ast
import pathlib
import sys

import pyevmasm

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates/crossflow/tests/fixtures/golden"
COUNT = 25

RENAMES = {"SHA3": "KECCAK256", "DIFFICULTY": "PREVRANDAO", "GETPC": "PC", "SUICIDE": "SELFDESTRUCT"}
# opcodes pyevmasm does not know: byte -> (mnemonic, immediate width)
ADDED = {0x5F: ("PUSH0", 0), 0x48: ("BASEFEE", 0)}
# byte -> (pops, pushes) where pyevmasm's table is wrong or missing
EFFECTS = {0x5F: (0, 1), 0x48: (0, 1), 0xF5: (4, 1)}


def runtime_constants(src_dir):
    found = {}
    for path in sorted(pathlib.Path(src_dir).glob("*.py")):
        tree = ast.parse(path.read_text())
        for node in tree.body:
            if not isinstance(node, ast.Assign) or len(node.targets) != 1:
                continue
            name = getattr(node.targets[0], "id", "")
            if not name.endswith("_RUNTIME"):
                continue
            try:
                value = ast.literal_eval(node.value)
            except ValueError:
                continue
            if isinstance(value, str) and value.startswith("0x") and len(value) > 2:
                found[name.lower()] = bytes.fromhex(value[2:])
    return found


def listing(code):
    lines = []
    pc = 0
    while pc < len(code):
        byte = code[pc]
        if byte in ADDED:
            name, width = ADDED[byte]
        else:
            ins = pyevmasm.disassemble_one(code[pc:] + b"\x00" * 32, pc=pc)
            name = RENAMES.get(ins.name, ins.name)
            width = ins.operand_size
        operand = code[pc + 1 : pc + 1 + width]
        line = f"{pc:04x}: {name}"
        if width:
            line += " 0x" + (operand + b"\x00" * (width - len(operand))).hex()
        if len(operand) < width:
            line += " (truncated)"
        lines.append(line)
        pc += 1 + width
    return "\n".join(lines) + "\n"


def opcode_table():
    rows = ["byte\tmnemonic\timmediate\tpops\tpushes"]
    for byte in range(256):
        if byte in ADDED:
            name, width = ADDED[byte]
        else:
            ins = pyevmasm.disassemble_one(bytes([byte]) + b"\x00" * 32)
            if ins.name == "INVALID" and byte != 0xFE:
                continue
            name, width = RENAMES.get(ins.name, ins.name), ins.operand_size
            pops, pushes = ins.pops, ins.pushes
        pops, pushes = EFFECTS.get(byte, (pops, pushes))
        rows.append(f"0x{byte:02x}\t{name}\t{width}\t{pops}\t{pushes}")
    return "\n".join(rows) + "\n"


def main():
    src = sys.argv[1] if len(sys.argv) > 1 else "web3/_utils/contract_sources/contract_data"
    constants = runtime_constants(src)
    unique = {}
    for name, code in sorted(constants.items()):
        if code not in unique.values():
            unique[name] = code
    chosen = sorted(unique.items(), key=lambda kv: -len(kv[1]))[:COUNT]
    OUT.mkdir(parents=True, exist_ok=True)
    for name, code in sorted(chosen):
        stem = name.removesuffix("_runtime")
        (OUT / f"{stem}.hex").write_text("0x" + code.hex() + "\n")
        (OUT / f"{stem}.lst").write_text(listing(code))
    (OUT / "opcodes.tsv").write_text(opcode_table())
    print(f"wrote {len(chosen)} contracts to {OUT}")


if __name__ == "__main__":
    main()
