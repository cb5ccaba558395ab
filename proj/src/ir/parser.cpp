#include "memfresh/ir/parser.hpp"

#include <fmt/format.h>

#include <cctype>
#include <charconv>
#include <set>

namespace memfresh::ir {

ParseError::ParseError(SourceLoc loc, const std::string& message)
    : std::runtime_error(fmt::format("{}:{}: {}", loc.line, loc.col, message)), loc_(loc), message_(message)
{
}

namespace {

enum class Tok { Ident, Reg, Global, Int, Bytes, Punct, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    std::uint64_t value = 0;
    std::vector<std::uint8_t> bytes;
    SourceLoc loc;
};

std::string describe(const Token& t)
{
    switch (t.kind) {
    case Tok::End: return "end of input";
    case Tok::Reg: return "'%" + t.text + "'";
    case Tok::Global: return "'@" + t.text + "'";
    default: return "'" + t.text + "'";
    }
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'; }

int hex_value(char c)
{
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    std::vector<Token> run()
    {
        std::vector<Token> out;
        for (;;) {
            skip_space();
            Token t;
            t.loc = here();
            if (pos_ >= src_.size()) {
                out.push_back(std::move(t));
                return out;
            }
            const char c = src_[pos_];
            if (c == '%' || c == '@') {
                advance();
                t.kind = c == '%' ? Tok::Reg : Tok::Global;
                t.text = read_ident();
                if (t.text.empty()) {
                    throw ParseError(t.loc, fmt::format("expected a name after '{}'", c));
                }
            } else if (ident_start(c)) {
                t.kind = Tok::Ident;
                t.text = read_ident();
                if (t.text == "bytes" && peek_char() == '(') {
                    t.kind = Tok::Bytes;
                    read_bytes(t);
                }
            } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                       (c == '-' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
                read_int(t);
            } else if (c == '-' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '>') {
                t.kind = Tok::Punct;
                t.text = "->";
                advance();
                advance();
            } else if (std::string_view("=,:(){}[]<>").find(c) != std::string_view::npos) {
                t.kind = Tok::Punct;
                t.text = std::string(1, c);
                advance();
            } else {
                throw ParseError(t.loc, fmt::format("unexpected character '{}'", c));
            }
            out.push_back(std::move(t));
        }
    }

private:
    SourceLoc here() const { return {line_, col_}; }
    char peek_char() const { return pos_ < src_.size() ? src_[pos_] : '\0'; }

    void advance()
    {
        if (src_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }

    void skip_space()
    {
        while (pos_ < src_.size()) {
            const char c = src_[pos_];
            if (c == ';') {
                while (pos_ < src_.size() && src_[pos_] != '\n') {
                    advance();
                }
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                advance();
            } else {
                return;
            }
        }
    }

    std::string read_ident()
    {
        std::string s;
        while (pos_ < src_.size() && ident_char(src_[pos_])) {
            s += src_[pos_];
            advance();
        }
        return s;
    }

    void read_int(Token& t)
    {
        t.kind = Tok::Int;
        bool negative = false;
        if (src_[pos_] == '-') {
            negative = true;
            advance();
        }
        std::string digits;
        int base = 10;
        if (src_.substr(pos_, 2) == "0x" || src_.substr(pos_, 2) == "0X") {
            base = 16;
            advance();
            advance();
        }
        while (pos_ < src_.size() && std::isalnum(static_cast<unsigned char>(src_[pos_]))) {
            digits += src_[pos_];
            advance();
        }
        std::uint64_t v = 0;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v, base);
        if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size()) {
            throw ParseError(t.loc, fmt::format("malformed integer literal '{}'", digits));
        }
        t.value = negative ? (~v + 1) : v;
        t.text = (negative ? "-" : "") + std::string(base == 16 ? "0x" : "") + digits;
    }

    void read_bytes(Token& t)
    {
        advance();  // '('
        std::string hex;
        while (pos_ < src_.size() && src_[pos_] != ')') {
            if (!std::isspace(static_cast<unsigned char>(src_[pos_]))) {
                hex += src_[pos_];
            }
            advance();
        }
        if (pos_ >= src_.size()) {
            throw ParseError(t.loc, "unterminated bytes(...) literal");
        }
        advance();  // ')'
        if (hex.size() % 2 != 0) {
            throw ParseError(t.loc, "bytes(...) needs an even number of hex digits");
        }
        for (std::size_t i = 0; i < hex.size(); i += 2) {
            const int hi = hex_value(hex[i]);
            const int lo = hex_value(hex[i + 1]);
            if (hi < 0 || lo < 0) {
                throw ParseError(t.loc, "non-hex digit in bytes(...) literal");
            }
            t.bytes.push_back(static_cast<std::uint8_t>(hi * 16 + lo));
        }
        t.text = "bytes(" + hex + ")";
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    std::uint32_t line_ = 1;
    std::uint32_t col_ = 1;
};

class Parser {
public:
    Parser(std::vector<Token> toks, Module& m) : toks_(std::move(toks)), m_(m) {}

    void parse_module()
    {
        while (peek().kind != Tok::End) {
            const Token& t = peek();
            if (t.kind != Tok::Ident) {
                throw ParseError(t.loc, fmt::format("expected a top-level declaration, found {}", describe(t)));
            }
            if (t.text == "aggregate") {
                parse_aggregate();
            } else if (t.text == "global") {
                parse_global();
            } else if (t.text == "fn") {
                parse_function();
            } else if (t.text == "counter") {
                parse_counter();
            } else if (t.text == "shadow") {
                next();
                m_.shadow_displacement = expect_int("shadow displacement");
            } else {
                throw ParseError(t.loc, fmt::format("unknown declaration {}", describe(t)));
            }
        }
    }

    Type parse_type_only()
    {
        Type t = parse_type();
        if (peek().kind != Tok::End) {
            throw ParseError(peek().loc, fmt::format("trailing input {}", describe(peek())));
        }
        return t;
    }

private:
    const Token& peek(std::size_t ahead = 0) const
    {
        const std::size_t i = std::min(pos_ + ahead, toks_.size() - 1);
        return toks_[i];
    }

    Token next()
    {
        Token t = toks_[pos_];
        if (pos_ + 1 < toks_.size()) {
            ++pos_;
        }
        return t;
    }

    bool is_punct(std::string_view p, std::size_t ahead = 0) const
    {
        const auto& t = peek(ahead);
        return t.kind == Tok::Punct && t.text == p;
    }

    bool is_word(std::string_view w) const { return peek().kind == Tok::Ident && peek().text == w; }

    void expect_punct(std::string_view p)
    {
        if (!is_punct(p)) {
            throw ParseError(peek().loc, fmt::format("expected '{}', found {}", p, describe(peek())));
        }
        next();
    }

    void expect_word(std::string_view w)
    {
        if (!is_word(w)) {
            throw ParseError(peek().loc, fmt::format("expected '{}', found {}", w, describe(peek())));
        }
        next();
    }

    std::string expect_ident(std::string_view what)
    {
        if (peek().kind != Tok::Ident) {
            throw ParseError(peek().loc, fmt::format("expected {}, found {}", what, describe(peek())));
        }
        return next().text;
    }

    std::uint64_t expect_int(std::string_view what)
    {
        if (peek().kind != Tok::Int) {
            throw ParseError(peek().loc, fmt::format("expected {}, found {}", what, describe(peek())));
        }
        return next().value;
    }

    std::string expect_reg()
    {
        if (peek().kind != Tok::Reg) {
            throw ParseError(peek().loc, fmt::format("expected a register, found {}", describe(peek())));
        }
        return next().text;
    }

    Type parse_type(bool allow_void = false)
    {
        const Token t = peek();
        if (is_punct("[")) {
            next();
            const std::uint64_t count = expect_int("array count");
            if (count == 0) {
                throw ParseError(t.loc, "array count must be at least 1");
            }
            expect_word("x");
            Type elem = parse_type();
            expect_punct("]");
            return Type::array(std::move(elem), count);
        }
        if (t.kind != Tok::Ident) {
            throw ParseError(t.loc, fmt::format("expected a type, found {}", describe(t)));
        }
        next();
        if (t.text == "void") {
            if (!allow_void) {
                throw ParseError(t.loc, "void is only allowed as a return type");
            }
            return Type::void_type();
        }
        if (t.text == "addr") {
            return Type::address();
        }
        if (t.text.size() > 1 && t.text[0] == 'i' &&
            std::all_of(t.text.begin() + 1, t.text.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
            const unsigned bits = static_cast<unsigned>(std::stoul(t.text.substr(1)));
            if (!is_valid_int_width(bits)) {
                throw ParseError(t.loc, fmt::format("unsupported integer width '{}'", t.text));
            }
            return Type::integer(bits);
        }
        if (t.text == "blk16" || t.text == "blk8") {
            expect_punct("<");
            const Token inner_tok = peek();
            Type inner = parse_type();
            expect_punct(">");
            try {
                return Type::block(std::move(inner), t.text == "blk16" ? 16 : 8);
            } catch (const std::invalid_argument& e) {
                throw ParseError(inner_tok.loc, e.what());
            }
        }
        if (m_.find_aggregate(t.text) == nullptr) {
            throw ParseError(t.loc, fmt::format("unknown type name '{}'", t.text));
        }
        return Type::named(t.text);
    }

    Operand parse_operand()
    {
        const Token t = peek();
        switch (t.kind) {
        case Tok::Reg: next(); return Operand::reg(t.text);
        case Tok::Global: next(); return Operand::global(t.text);
        case Tok::Int: next(); return Operand::constant(t.value);
        default: throw ParseError(t.loc, fmt::format("expected an operand, found {}", describe(t)));
        }
    }

    void check_new_name(const std::string& name, std::set<std::string>& seen, SourceLoc loc, std::string_view what)
    {
        if (!seen.insert(name).second) {
            throw ParseError(loc, fmt::format("duplicate {} name '{}'", what, name));
        }
    }

    void parse_aggregate()
    {
        next();
        const SourceLoc loc = peek().loc;
        std::string name = expect_ident("aggregate name");
        check_new_name(name, aggregate_names_, loc, "aggregate");
        expect_punct("=");
        expect_punct("{");
        AggregateDef def{name, {}};
        if (is_punct("}")) {
            throw ParseError(peek().loc, "aggregate needs at least one field");
        }
        def.fields.push_back(parse_type());
        while (is_punct(",")) {
            next();
            def.fields.push_back(parse_type());
        }
        expect_punct("}");
        m_.aggregates.push_back(std::move(def));
    }

    void parse_global()
    {
        next();
        const Token name_tok = peek();
        if (name_tok.kind != Tok::Global) {
            throw ParseError(name_tok.loc, fmt::format("expected a global name, found {}", describe(name_tok)));
        }
        next();
        check_new_name(name_tok.text, global_names_, name_tok.loc, "global");
        expect_punct(":");
        Global g;
        g.name = name_tok.text;
        g.loc = name_tok.loc;
        g.type = parse_type();
        expect_punct("=");
        if (is_word("zeroinit")) {
            next();
        } else if (peek().kind == Tok::Bytes) {
            g.init = next().bytes;
        } else {
            throw ParseError(peek().loc, fmt::format("expected zeroinit or bytes(...), found {}", describe(peek())));
        }
        m_.globals.push_back(std::move(g));
    }

    void parse_counter()
    {
        next();
        if (is_word("random")) {
            next();
            m_.counter = CounterSeedPolicy::per_run_random();
        } else if (is_word("fixed")) {
            next();
            m_.counter = CounterSeedPolicy::fixed(expect_int("counter seed"));
        } else {
            throw ParseError(peek().loc, fmt::format("expected 'random' or 'fixed', found {}", describe(peek())));
        }
    }

    void parse_function()
    {
        next();
        Function f;
        if (is_word("protect")) {
            next();
            f.protect = true;
        }
        f.loc = peek().loc;
        f.name = expect_ident("function name");
        check_new_name(f.name, function_names_, f.loc, "function");
        expect_punct("(");
        if (!is_punct(")")) {
            for (;;) {
                Param p;
                p.name = expect_reg();
                expect_punct(":");
                p.type = parse_type();
                f.params.push_back(std::move(p));
                if (!is_punct(",")) {
                    break;
                }
                next();
            }
        }
        expect_punct(")");
        expect_punct("->");
        f.ret = parse_type(true);
        expect_punct("{");
        while (!is_punct("}")) {
            if (peek().kind == Tok::End) {
                throw ParseError(peek().loc, "unterminated function body");
            }
            if (peek().kind == Tok::Ident && is_punct(":", 1) && !opcode_from_name(peek().text)) {
                f.blocks.push_back(BasicBlock{next().text, {}});
                next();
                continue;
            }
            if (f.blocks.empty()) {
                throw ParseError(peek().loc, "expected a block label before the first instruction");
            }
            f.blocks.back().instrs.push_back(parse_instr(f));
        }
        next();
        m_.functions.push_back(std::move(f));
    }

    Instr parse_instr(const Function& f)
    {
        Instr in;
        in.loc = peek().loc;
        if (peek().kind == Tok::Reg) {
            in.result = next().text;
            expect_punct("=");
        }
        const Token op_tok = peek();
        const auto op = op_tok.kind == Tok::Ident ? opcode_from_name(op_tok.text) : std::nullopt;
        if (!op) {
            throw ParseError(op_tok.loc, fmt::format("expected an instruction, found {}", describe(op_tok)));
        }
        next();
        in.op = *op;
        in.id = ++next_id_;

        bool needs_result = true;
        switch (in.op) {
        case Opcode::Alloca: in.type = parse_type(); break;
        case Opcode::Load:
        case Opcode::BlkLoad:
            in.type = parse_type();
            expect_punct(",");
            in.args.push_back(parse_operand());
            break;
        case Opcode::Store:
            needs_result = false;
            in.type = parse_type();
            in.args.push_back(parse_operand());
            expect_punct(",");
            in.args.push_back(parse_operand());
            break;
        case Opcode::BlkStore:
            needs_result = false;
            in.type = parse_type();
            in.args.push_back(parse_operand());
            expect_punct(",");
            in.args.push_back(parse_operand());
            expect_punct(",");
            in.args.push_back(parse_operand());
            break;
        case Opcode::Gep:
            in.type = parse_type();
            expect_punct(",");
            in.args.push_back(parse_operand());
            expect_punct(",");
            in.args.push_back(parse_operand());
            while (is_punct(",")) {
                next();
                in.args.push_back(parse_operand());
            }
            break;
        case Opcode::Icmp: {
            const Token p = peek();
            const auto pred = p.kind == Tok::Ident ? pred_from_name(p.text) : std::nullopt;
            if (!pred) {
                throw ParseError(p.loc, fmt::format("expected a comparison predicate, found {}", describe(p)));
            }
            next();
            in.pred = *pred;
            in.type = parse_type();
            in.args.push_back(parse_operand());
            expect_punct(",");
            in.args.push_back(parse_operand());
            break;
        }
        case Opcode::Select:
            in.type = parse_type();
            for (int i = 0; i < 3; ++i) {
                if (i > 0) {
                    expect_punct(",");
                }
                in.args.push_back(parse_operand());
            }
            break;
        case Opcode::Zext:
        case Opcode::Trunc:
            in.type = parse_type();
            in.args.push_back(parse_operand());
            expect_word("to");
            in.to_type = parse_type();
            break;
        case Opcode::PtrToInt:
        case Opcode::IntToPtr:
        case Opcode::Malloc: in.args.push_back(parse_operand()); break;
        case Opcode::Free:
            needs_result = false;
            in.args.push_back(parse_operand());
            break;
        case Opcode::Br:
            needs_result = false;
            in.targets.push_back(expect_ident("a block label"));
            break;
        case Opcode::CondBr:
            needs_result = false;
            in.args.push_back(parse_operand());
            expect_punct(",");
            in.targets.push_back(expect_ident("a block label"));
            expect_punct(",");
            in.targets.push_back(expect_ident("a block label"));
            break;
        case Opcode::Ret:
            needs_result = false;
            if (!f.ret.is_void()) {
                in.args.push_back(parse_operand());
            }
            break;
        case Opcode::Call: {
            in.type = parse_type(true);
            needs_result = !in.type.is_void();
            if (peek().kind == Tok::Reg) {
                in.args.push_back(Operand::reg(next().text));
            } else {
                in.callee = expect_ident("a callee");
            }
            expect_punct("(");
            if (!is_punct(")")) {
                for (;;) {
                    in.args.push_back(parse_operand());
                    if (!is_punct(",")) {
                        break;
                    }
                    next();
                }
            }
            expect_punct(")");
            break;
        }
        case Opcode::FnAddr: in.callee = expect_ident("a function name"); break;
        case Opcode::Memcpy:
        case Opcode::Memset:
            needs_result = false;
            for (int i = 0; i < 3; ++i) {
                in.args.push_back(parse_operand());
                expect_punct(",");
            }
            in.type = parse_type();
            break;
        case Opcode::Declassify:
            needs_result = false;
            in.type = parse_type();
            in.args.push_back(parse_operand());
            break;
        case Opcode::CtrInc: break;
        case Opcode::MaskGen: {
            in.type = parse_type();
            const Token r = peek();
            const auto rng = r.kind == Tok::Ident ? mask_rng_from_name(r.text) : std::nullopt;
            if (!rng) {
                throw ParseError(r.loc, fmt::format("expected a mask generator name, found {}", describe(r)));
            }
            next();
            in.rng = *rng;
            break;
        }
        default:
            if (is_binary(in.op)) {
                in.type = parse_type();
                in.args.push_back(parse_operand());
                expect_punct(",");
                in.args.push_back(parse_operand());
                break;
            }
            throw ParseError(op_tok.loc, "unhandled instruction");
        }

        if (needs_result && !in.has_result()) {
            throw ParseError(op_tok.loc, fmt::format("'{}' produces a value and needs a result register", op_tok.text));
        }
        if (!needs_result && in.has_result()) {
            throw ParseError(op_tok.loc, fmt::format("'{}' does not produce a value", op_tok.text));
        }
        return in;
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    Module& m_;
    std::uint32_t next_id_ = 0;
    std::set<std::string> aggregate_names_;
    std::set<std::string> global_names_;
    std::set<std::string> function_names_;
};

}  // namespace

Module parse_module(std::string_view text)
{
    Module m;
    Parser p(Lexer(text).run(), m);
    p.parse_module();
    return m;
}

Type parse_type(std::string_view text, const Module& types)
{
    Module scratch;
    scratch.aggregates = types.aggregates;
    Parser p(Lexer(text).run(), scratch);
    return p.parse_type_only();
}

}  // namespace memfresh::ir
