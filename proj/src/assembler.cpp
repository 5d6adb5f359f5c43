// Copyright (c) cclpol contributors.
// SPDX-License-Identifier: Apache-2.0
#include "cclpol/assembler.hpp"

#include <cctype>
#include <charconv>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>
#include <vector>

namespace cclpol {

ParseError::ParseError(int line, int column, const std::string& message)
    : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " + message), line_(line),
      column_(column), message_(message) {}

namespace {

struct AluName {
    std::string_view name;
    std::uint8_t code;
};

constexpr AluName alu_names[] = {
    {"add", op::ADD}, {"sub", op::SUB}, {"mul", op::MUL},   {"div", op::DIV}, {"or", op::OR},
    {"and", op::AND}, {"lsh", op::LSH}, {"rsh", op::RSH},   {"mod", op::MOD}, {"xor", op::XOR},
    {"mov", op::MOV}, {"arsh", op::ARSH},
};

constexpr AluName jmp_names[] = {
    {"jeq", op::JEQ},   {"jne", op::JNE},   {"jgt", op::JGT},   {"jge", op::JGE},   {"jlt", op::JLT},
    {"jle", op::JLE},   {"jsgt", op::JSGT}, {"jsge", op::JSGE}, {"jslt", op::JSLT}, {"jsle", op::JSLE},
};

constexpr std::string_view width_suffix(int width) {
    switch (width) {
    case 1: return "b";
    case 2: return "h";
    case 4: return "w";
    default: return "dw";
    }
}

std::optional<int> width_from_suffix(std::string_view s) {
    if (s == "b") return 1;
    if (s == "h") return 2;
    if (s == "w") return 4;
    if (s == "dw") return 8;
    return std::nullopt;
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

bool is_identifier(std::string_view s) {
    if (s.empty() || !is_ident_start(s[0])) {
        return false;
    }
    for (char c : s) {
        if (!is_ident_char(c)) {
            return false;
        }
    }
    return true;
}

struct Token {
    std::string_view text;
    int column; // 1-based
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Splits `s` (starting at column `col0`) on `sep`, trimming each piece.
std::vector<Token> split(std::string_view s, int col0, char sep) {
    std::vector<Token> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            auto piece = s.substr(start, i - start);
            std::size_t lead = 0;
            while (lead < piece.size() && std::isspace(static_cast<unsigned char>(piece[lead]))) ++lead;
            out.push_back({trim(piece), col0 + static_cast<int>(start + lead)});
            start = i + 1;
        }
    }
    return out;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
    bool neg = false;
    if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
        neg = s[0] == '-';
        s.remove_prefix(1);
    }
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        base = 16;
        s.remove_prefix(2);
    }
    if (s.empty()) {
        return std::nullopt;
    }
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        return std::nullopt;
    }
    if (neg) {
        if (v > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()) + 1) return std::nullopt;
        return static_cast<std::int64_t>(0 - v);
    }
    if (v > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) return std::nullopt;
    return static_cast<std::int64_t>(v);
}

struct PendingJump {
    std::size_t index;
    std::string label;
    int line;
    int column;
};

class Assembler {
  public:
    explicit Assembler(std::string_view source) : source_(source) {}

    Program run() {
        int line_no = 0;
        std::size_t pos = 0;
        while (pos <= source_.size()) {
            auto nl = source_.find('\n', pos);
            if (nl == std::string_view::npos) nl = source_.size();
            ++line_no;
            parse_line(source_.substr(pos, nl - pos), line_no);
            pos = nl + 1;
        }
        for (const auto& j : pending_) {
            auto it = labels_.find(j.label);
            if (it == labels_.end()) {
                throw ParseError(j.line, j.column, "undefined label '" + j.label + "'");
            }
            auto delta = static_cast<std::int64_t>(it->second) - static_cast<std::int64_t>(j.index) - 1;
            if (delta < std::numeric_limits<std::int16_t>::min() || delta > std::numeric_limits<std::int16_t>::max()) {
                throw ParseError(j.line, j.column, "jump to '" + j.label + "' out of 16-bit range");
            }
            prog_.instructions[j.index].offset = static_cast<std::int16_t>(delta);
        }
        for (const auto& m : map_refs_) {
            auto it = map_slots_.find(m.label);
            if (it == map_slots_.end()) {
                throw ParseError(m.line, m.column, "unknown map '" + m.label + "'");
            }
            prog_.instructions[m.index].imm = static_cast<std::int32_t>(it->second);
        }
        if (prog_.instructions.size() > MAX_PROGRAM_INSNS) {
            throw ParseError(line_no, 1, "program exceeds 65536 instructions");
        }
        return std::move(prog_);
    }

  private:
    std::string_view source_;
    Program prog_;
    std::map<std::string, std::size_t, std::less<>> labels_;
    std::map<std::string, std::size_t, std::less<>> map_slots_;
    std::vector<PendingJump> pending_;
    std::vector<PendingJump> map_refs_;

    void parse_line(std::string_view raw, int line_no) {
        auto semi = raw.find(';');
        if (semi != std::string_view::npos) raw = raw.substr(0, semi);
        std::size_t lead = 0;
        while (lead < raw.size() && std::isspace(static_cast<unsigned char>(raw[lead]))) ++lead;
        auto text = trim(raw);
        int col = static_cast<int>(lead) + 1;
        if (text.empty()) return;

        // Leading label, possibly followed by an instruction on the same line.
        auto colon = text.find(':');
        if (colon != std::string_view::npos && is_identifier(trim(text.substr(0, colon))) && text[0] != '.') {
            auto name = std::string(trim(text.substr(0, colon)));
            if (labels_.count(name)) {
                throw ParseError(line_no, col, "duplicate label '" + name + "'");
            }
            labels_.emplace(name, prog_.instructions.size());
            auto rest = text.substr(colon + 1);
            std::size_t skip = 0;
            while (skip < rest.size() && std::isspace(static_cast<unsigned char>(rest[skip]))) ++skip;
            col += static_cast<int>(colon + 1 + skip);
            text = trim(rest);
            if (text.empty()) return;
        }
        if (text[0] == '.') {
            parse_directive(text, line_no, col);
        } else {
            parse_instruction(text, line_no, col);
        }
    }

    void parse_directive(std::string_view text, int line_no, int col) {
        auto words = split_words(text, col);
        auto dir = words[0].text;
        if (dir == ".name") {
            if (words.size() != 2 || !is_identifier(words[1].text)) {
                throw ParseError(line_no, col, ".name expects one identifier");
            }
            prog_.name = std::string(words[1].text);
        } else if (dir == ".hook") {
            if (words.size() != 2) {
                throw ParseError(line_no, col, ".hook expects tuner|profiler|net_tx|net_rx");
            }
            auto hook = parse_hook(words[1].text);
            if (!hook) {
                throw ParseError(line_no, words[1].column, "unknown hook '" + std::string(words[1].text) + "'");
            }
            prog_.hook = *hook;
        } else if (dir == ".map") {
            parse_map(words, line_no, col);
        } else {
            throw ParseError(line_no, col, "unknown directive '" + std::string(dir) + "'");
        }
    }

    static std::vector<Token> split_words(std::string_view text, int col0) {
        std::vector<Token> out;
        std::size_t i = 0;
        while (i < text.size()) {
            while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            if (i >= text.size()) break;
            auto start = i;
            while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
            out.push_back({text.substr(start, i - start), col0 + static_cast<int>(start)});
        }
        return out;
    }

    void parse_map(const std::vector<Token>& words, int line_no, int col) {
        if (words.size() != 6) {
            throw ParseError(line_no, col, ".map expects: <name> array|hash key=<n> value=<n> entries=<n>");
        }
        MapDescriptor desc;
        if (!is_identifier(words[1].text)) {
            throw ParseError(line_no, words[1].column, "bad map name '" + std::string(words[1].text) + "'");
        }
        desc.name = std::string(words[1].text);
        if (words[2].text == "array") {
            desc.kind = MapKind::ARRAY;
        } else if (words[2].text == "hash") {
            desc.kind = MapKind::HASH;
        } else {
            throw ParseError(line_no, words[2].column, "unknown map kind '" + std::string(words[2].text) + "'");
        }
        bool seen[3] = {false, false, false};
        for (std::size_t i = 3; i < 6; ++i) {
            auto eq = words[i].text.find('=');
            auto key = words[i].text.substr(0, eq);
            auto val = eq == std::string_view::npos ? std::optional<std::int64_t>{} : parse_int(words[i].text.substr(eq + 1));
            if (!val || *val < 0 || *val > std::numeric_limits<std::uint32_t>::max()) {
                throw ParseError(line_no, words[i].column, "expected key=<n>, value=<n> or entries=<n>");
            }
            auto v = static_cast<std::uint32_t>(*val);
            int slot = key == "key" ? 0 : key == "value" ? 1 : key == "entries" ? 2 : -1;
            if (slot < 0 || seen[slot]) {
                throw ParseError(line_no, words[i].column, "unexpected map attribute '" + std::string(key) + "'");
            }
            seen[slot] = true;
            (slot == 0 ? desc.key_size : slot == 1 ? desc.value_size : desc.max_entries) = v;
        }
        if (auto err = validate(desc); !err.empty()) {
            throw ParseError(line_no, words[1].column, "map '" + desc.name + "': " + err);
        }
        if (map_slots_.count(desc.name)) {
            throw ParseError(line_no, words[1].column, "duplicate map name '" + desc.name + "'");
        }
        map_slots_.emplace(desc.name, prog_.maps.size());
        prog_.maps.push_back(std::move(desc));
    }

    std::uint8_t parse_reg(const Token& t, int line_no) const {
        auto s = t.text;
        if (s.size() >= 2 && s[0] == 'r') {
            auto v = parse_int(s.substr(1));
            if (v && *v >= 0 && *v < NUM_REGISTERS && std::isdigit(static_cast<unsigned char>(s[1]))) {
                return static_cast<std::uint8_t>(*v);
            }
        }
        throw ParseError(line_no, t.column, "bad register '" + std::string(s) + "'");
    }

    static bool looks_like_reg(std::string_view s) {
        return s.size() >= 2 && s[0] == 'r' && std::isdigit(static_cast<unsigned char>(s[1]));
    }

    std::int32_t parse_imm(const Token& t, int line_no) const {
        auto v = parse_int(t.text);
        if (!v) {
            throw ParseError(line_no, t.column, "bad immediate '" + std::string(t.text) + "'");
        }
        if (*v < std::numeric_limits<std::int32_t>::min() || *v > std::numeric_limits<std::uint32_t>::max()) {
            throw ParseError(line_no, t.column, "immediate out of 32-bit range");
        }
        return static_cast<std::int32_t>(static_cast<std::uint32_t>(*v));
    }

    // "[rN+off]" / "[rN-off]" / "[rN]"
    std::pair<std::uint8_t, std::int16_t> parse_mem(const Token& t, int line_no) const {
        auto s = t.text;
        if (s.size() < 4 || s.front() != '[' || s.back() != ']') {
            throw ParseError(line_no, t.column, "expected memory operand [rN+off]");
        }
        auto inner = s.substr(1, s.size() - 2);
        auto sign = inner.find_first_of("+-");
        auto reg_text = trim(inner.substr(0, sign));
        auto reg = parse_reg({reg_text, t.column + 1}, line_no);
        std::int64_t off = 0;
        if (sign != std::string_view::npos) {
            std::string num(1, inner[sign]);
            auto rest = trim(inner.substr(sign + 1));
            num += rest;
            auto v = parse_int(num);
            if (!v || rest.empty() || rest[0] == '-' || rest[0] == '+') {
                throw ParseError(line_no, t.column, "bad memory offset in '" + std::string(s) + "'");
            }
            off = *v;
        }
        if (off < std::numeric_limits<std::int16_t>::min() || off > std::numeric_limits<std::int16_t>::max()) {
            throw ParseError(line_no, t.column, "memory offset out of 16-bit range");
        }
        return {reg, static_cast<std::int16_t>(off)};
    }

    void parse_target(const Token& t, int line_no, Instruction& insn) {
        auto s = t.text;
        if (!s.empty() && (s[0] == '+' || s[0] == '-')) {
            auto v = parse_int(s);
            if (!v || *v < std::numeric_limits<std::int16_t>::min() || *v > std::numeric_limits<std::int16_t>::max()) {
                throw ParseError(line_no, t.column, "bad jump offset '" + std::string(s) + "'");
            }
            insn.offset = static_cast<std::int16_t>(*v);
            return;
        }
        if (!is_identifier(s)) {
            throw ParseError(line_no, t.column, "bad jump target '" + std::string(s) + "'");
        }
        pending_.push_back({prog_.instructions.size(), std::string(s), line_no, t.column});
    }

    void expect_operands(const std::vector<Token>& ops, std::size_t n, std::string_view mnem, int line_no, int col) const {
        if (ops.size() != n) {
            throw ParseError(line_no, col,
                             std::string(mnem) + " expects " + std::to_string(n) + " operand" + (n == 1 ? "" : "s"));
        }
        for (const auto& o : ops) {
            if (o.text.empty()) {
                throw ParseError(line_no, o.column, "empty operand");
            }
        }
    }

    void parse_instruction(std::string_view text, int line_no, int col) {
        std::size_t mend = 0;
        while (mend < text.size() && !std::isspace(static_cast<unsigned char>(text[mend]))) ++mend;
        auto mnem = text.substr(0, mend);
        std::vector<Token> ops;
        auto rest = text.substr(mend);
        if (!trim(rest).empty()) {
            ops = split(rest, col + static_cast<int>(mend), ',');
        }

        Instruction insn;
        if (mnem == "exit") {
            expect_operands(ops, 0, mnem, line_no, col);
            insn.opcode = op::CLS_JMP | op::EXIT;
        } else if (mnem == "call") {
            expect_operands(ops, 1, mnem, line_no, col);
            insn.opcode = op::CLS_JMP | op::CALL;
            insn.imm = parse_imm(ops[0], line_no);
        } else if (mnem == "ja") {
            expect_operands(ops, 1, mnem, line_no, col);
            insn.opcode = op::CLS_JMP | op::JA;
            parse_target(ops[0], line_no, insn);
        } else if (mnem == "neg") {
            expect_operands(ops, 1, mnem, line_no, col);
            insn.opcode = op::CLS_ALU64 | op::NEG;
            insn.dst = parse_reg(ops[0], line_no);
        } else if (mnem == "ld_map") {
            expect_operands(ops, 2, mnem, line_no, col);
            insn.opcode = op::LD_MAP;
            insn.src = op::PSEUDO_MAP;
            insn.dst = parse_reg(ops[0], line_no);
            if (!is_identifier(ops[1].text)) {
                throw ParseError(line_no, ops[1].column, "bad map name '" + std::string(ops[1].text) + "'");
            }
            map_refs_.push_back({prog_.instructions.size(), std::string(ops[1].text), line_no, ops[1].column});
        } else if (auto alu = lookup(alu_names, mnem)) {
            expect_operands(ops, 2, mnem, line_no, col);
            insn.dst = parse_reg(ops[0], line_no);
            if (looks_like_reg(ops[1].text)) {
                insn.opcode = op::CLS_ALU64 | op::SRC_REG | *alu;
                insn.src = parse_reg(ops[1], line_no);
            } else {
                insn.opcode = op::CLS_ALU64 | op::SRC_IMM | *alu;
                insn.imm = parse_imm(ops[1], line_no);
            }
        } else if (auto jmp = lookup(jmp_names, mnem)) {
            expect_operands(ops, 3, mnem, line_no, col);
            insn.dst = parse_reg(ops[0], line_no);
            if (looks_like_reg(ops[1].text)) {
                insn.opcode = op::CLS_JMP | op::SRC_REG | *jmp;
                insn.src = parse_reg(ops[1], line_no);
            } else {
                insn.opcode = op::CLS_JMP | op::SRC_IMM | *jmp;
                insn.imm = parse_imm(ops[1], line_no);
            }
            parse_target(ops[2], line_no, insn);
        } else if (mnem.starts_with("ldx") && width_from_suffix(mnem.substr(3))) {
            expect_operands(ops, 2, mnem, line_no, col);
            insn.opcode = op::CLS_LDX | op::MODE_MEM | size_bits_for_width(*width_from_suffix(mnem.substr(3)));
            insn.dst = parse_reg(ops[0], line_no);
            std::tie(insn.src, insn.offset) = parse_mem(ops[1], line_no);
        } else if (mnem.starts_with("stx") && width_from_suffix(mnem.substr(3))) {
            expect_operands(ops, 2, mnem, line_no, col);
            insn.opcode = op::CLS_STX | op::MODE_MEM | size_bits_for_width(*width_from_suffix(mnem.substr(3)));
            std::tie(insn.dst, insn.offset) = parse_mem(ops[0], line_no);
            insn.src = parse_reg(ops[1], line_no);
        } else if (mnem.starts_with("st") && width_from_suffix(mnem.substr(2))) {
            expect_operands(ops, 2, mnem, line_no, col);
            insn.opcode = op::CLS_ST | op::MODE_MEM | size_bits_for_width(*width_from_suffix(mnem.substr(2)));
            std::tie(insn.dst, insn.offset) = parse_mem(ops[0], line_no);
            insn.imm = parse_imm(ops[1], line_no);
        } else {
            throw ParseError(line_no, col, "unknown mnemonic '" + std::string(mnem) + "'");
        }
        prog_.instructions.push_back(insn);
    }

    template <std::size_t N>
    static std::optional<std::uint8_t> lookup(const AluName (&table)[N], std::string_view name) {
        for (const auto& e : table) {
            if (e.name == name) return e.code;
        }
        return std::nullopt;
    }
};

std::string_view alu_mnemonic(std::uint8_t code) {
    for (const auto& e : alu_names) {
        if (e.code == code) return e.name;
    }
    return code == op::NEG ? "neg" : "?";
}

std::string_view jmp_mnemonic(std::uint8_t code) {
    for (const auto& e : jmp_names) {
        if (e.code == code) return e.name;
    }
    return "?";
}

std::string mem_operand(std::uint8_t reg, std::int16_t off) {
    std::string s = "[r" + std::to_string(reg);
    s += off < 0 ? "-" : "+";
    s += std::to_string(off < 0 ? -static_cast<int>(off) : static_cast<int>(off));
    return s + "]";
}

std::string format_with_target(const Instruction& insn, const Program* program, const std::string& target) {
    const auto cls = op::class_of(insn.opcode);
    const auto r = [](std::uint8_t reg) { return "r" + std::to_string(reg); };
    switch (cls) {
    case op::CLS_ALU64: {
        auto code = op::alu_op(insn.opcode);
        if (code == op::NEG) return "neg " + r(insn.dst);
        return std::string(alu_mnemonic(code)) + " " + r(insn.dst) + ", " +
               (op::uses_reg(insn.opcode) ? r(insn.src) : std::to_string(insn.imm));
    }
    case op::CLS_JMP: {
        auto code = op::jmp_op(insn.opcode);
        if (code == op::EXIT) return "exit";
        if (code == op::CALL) return "call " + std::to_string(insn.imm);
        if (code == op::JA) return "ja " + target;
        return std::string(jmp_mnemonic(code)) + " " + r(insn.dst) + ", " +
               (op::uses_reg(insn.opcode) ? r(insn.src) : std::to_string(insn.imm)) + ", " + target;
    }
    case op::CLS_LDX:
        return "ldx" + std::string(width_suffix(access_width(insn.opcode))) + " " + r(insn.dst) + ", " +
               mem_operand(insn.src, insn.offset);
    case op::CLS_STX:
        return "stx" + std::string(width_suffix(access_width(insn.opcode))) + " " + mem_operand(insn.dst, insn.offset) +
               ", " + r(insn.src);
    case op::CLS_ST:
        return "st" + std::string(width_suffix(access_width(insn.opcode))) + " " + mem_operand(insn.dst, insn.offset) +
               ", " + std::to_string(insn.imm);
    case op::CLS_LD: {
        std::string name;
        if (program && insn.imm >= 0 && static_cast<std::size_t>(insn.imm) < program->maps.size()) {
            name = program->maps[static_cast<std::size_t>(insn.imm)].name;
        } else {
            name = "map#" + std::to_string(insn.imm);
        }
        return "ld_map " + r(insn.dst) + ", " + name;
    }
    default:
        return "<bad opcode " + std::to_string(insn.opcode) + ">";
    }
}

std::string numeric_target(std::int16_t off) { return (off < 0 ? "" : "+") + std::to_string(off); }

} // namespace

Program assemble(std::string_view source) { return Assembler(source).run(); }

std::string format_instruction(const Instruction& insn, const Program* program) {
    return format_with_target(insn, program, numeric_target(insn.offset));
}

std::string disassemble(const Program& program) {
    const auto n = static_cast<std::int64_t>(program.instructions.size());
    std::set<std::int64_t> targets;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& insn = program.instructions[static_cast<std::size_t>(i)];
        if (is_jump(insn)) {
            auto t = i + 1 + insn.offset;
            if (t >= 0 && t < n) targets.insert(t);
        }
    }
    std::ostringstream out;
    bool first = true;
    auto line = [&](const std::string& s) {
        if (!first) out << '\n';
        out << s;
        first = false;
    };
    if (!program.name.empty()) line(".name " + program.name);
    if (program.hook != HookKind::TUNER) line(".hook " + std::string(to_string(program.hook)));
    for (const auto& m : program.maps) {
        line(".map " + m.name + " " + std::string(to_string(m.kind)) + " key=" + std::to_string(m.key_size) +
             " value=" + std::to_string(m.value_size) + " entries=" + std::to_string(m.max_entries));
    }
    for (std::int64_t i = 0; i < n; ++i) {
        if (targets.count(i)) line("L" + std::to_string(i) + ":");
        const auto& insn = program.instructions[static_cast<std::size_t>(i)];
        std::string target;
        if (is_jump(insn)) {
            auto t = i + 1 + insn.offset;
            target = (t >= 0 && t < n) ? "L" + std::to_string(t) : numeric_target(insn.offset);
        }
        line(format_with_target(insn, &program, target));
    }
    return out.str();
}

} // namespace cclpol
