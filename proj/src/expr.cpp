#include "evobench/expr.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <numbers>

#include "evobench/rng.hpp"
#include "evobench/sampling.hpp"

namespace evobench {

namespace {

// ---------------------------------------------------------------------------
// guarded primitives (total-function semantics)

constexpr double kDivFloor = 1e-12;
constexpr double kLogFloor = 1e-12;

inline double safe_div(double a, double b) {
    if (std::fabs(b) < kDivFloor) b = (b < 0.0) ? -kDivFloor : kDivFloor;  // sign(0) = +1
    return a / b;
}

inline double safe_log(double v) { return std::log(std::max(v, kLogFloor)); }

inline double safe_pow(double x, double p) {
    if (x < 0.0 && p != std::floor(p)) return -std::pow(-x, p);  // sign-preserving
    return std::pow(x, p);
}

inline double apply_unary(UnaryOp op, double v) {
    switch (op) {
        case UnaryOp::Sin: return std::sin(v);
        case UnaryOp::Cos: return std::cos(v);
        case UnaryOp::Tan: return std::tan(v);
        case UnaryOp::Tanh: return std::tanh(v);
        case UnaryOp::Exp: return std::exp(v);
        case UnaryOp::Log: return safe_log(v);
        case UnaryOp::Abs: return std::fabs(v);
        case UnaryOp::Sqrt: return std::sqrt(v);
        case UnaryOp::Sign: return (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        case UnaryOp::Floor: return std::floor(v);
        case UnaryOp::Neg: return -v;
    }
    return 0.0;
}

inline double apply_binary(BinaryOp op, double a, double b) {
    switch (op) {
        case BinaryOp::Add: return a + b;
        case BinaryOp::Sub: return a - b;
        case BinaryOp::Mul: return a * b;
        case BinaryOp::Div: return safe_div(a, b);
        case BinaryOp::Pow: return safe_pow(a, b);
        case BinaryOp::Min2: return std::min(a, b);
        case BinaryOp::Max2: return std::max(a, b);
    }
    return 0.0;
}

inline bool apply_cmp(CmpOp op, double a, double b) {
    switch (op) {
        case CmpOp::Lt: return a < b;
        case CmpOp::Le: return a <= b;
        case CmpOp::Gt: return a > b;
        case CmpOp::Ge: return a >= b;
        case CmpOp::Eq: return a == b;
        case CmpOp::Ne: return a != b;
    }
    return false;
}

// ---------------------------------------------------------------------------
// lexer

enum class Tok {
    Number, Ident,
    Plus, Minus, Star, Slash, Caret,
    LParen, RParen, LBracket, RBracket,
    Colon, Semicolon, Comma, Assign,
    Lt, Le, Gt, Ge, Eq, Ne,
    End,
};

struct Token {
    Tok kind;
    int offset;
    double number = 0.0;
    std::string text;
};

std::vector<Token> lex(std::string_view src) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < src.size()) {
        char c = src[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            ++i;
            continue;
        }
        int off = static_cast<int>(i);
        auto push = [&](Tok k, std::size_t adv) {
            out.push_back({k, off, 0.0, std::string(src.substr(i, adv))});
            i += adv;
        };
        if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
            std::string buf(src.substr(i, std::min<std::size_t>(64, src.size() - i)));
            char* end = nullptr;
            double v = std::strtod(buf.c_str(), &end);
            std::size_t len = static_cast<std::size_t>(end - buf.c_str());
            if (len == 0) throw ExprError(ExprError::Kind::Parse, off, "malformed number", {"number"});
            out.push_back({Tok::Number, off, v, buf.substr(0, len)});
            i += len;
            continue;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i;
            while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
            out.push_back({Tok::Ident, off, 0.0, std::string(src.substr(i, j - i))});
            i = j;
            continue;
        }
        switch (c) {
            case '+': push(Tok::Plus, 1); break;
            case '-': push(Tok::Minus, 1); break;
            case '*': push(Tok::Star, 1); break;
            case '/': push(Tok::Slash, 1); break;
            case '^': push(Tok::Caret, 1); break;
            case '(': push(Tok::LParen, 1); break;
            case ')': push(Tok::RParen, 1); break;
            case '[': push(Tok::LBracket, 1); break;
            case ']': push(Tok::RBracket, 1); break;
            case ':': push(Tok::Colon, 1); break;
            case ';': push(Tok::Semicolon, 1); break;
            case ',': push(Tok::Comma, 1); break;
            case '<': (i + 1 < src.size() && src[i + 1] == '=') ? push(Tok::Le, 2) : push(Tok::Lt, 1); break;
            case '>': (i + 1 < src.size() && src[i + 1] == '=') ? push(Tok::Ge, 2) : push(Tok::Gt, 1); break;
            case '=': (i + 1 < src.size() && src[i + 1] == '=') ? push(Tok::Eq, 2) : push(Tok::Assign, 1); break;
            case '!':
                if (i + 1 < src.size() && src[i + 1] == '=') { push(Tok::Ne, 2); break; }
                throw ExprError(ExprError::Kind::Parse, off, "stray '!'", {"'!='"});
            default:
                throw ExprError(ExprError::Kind::Parse, off, std::string("unexpected character '") + c + "'");
        }
    }
    out.push_back({Tok::End, static_cast<int>(src.size()), 0.0, ""});
    return out;
}

// ---------------------------------------------------------------------------
// parser

const std::map<std::string_view, UnaryOp> kUnaryFns = {
    {"sin", UnaryOp::Sin},   {"cos", UnaryOp::Cos},   {"tan", UnaryOp::Tan},
    {"tanh", UnaryOp::Tanh}, {"exp", UnaryOp::Exp},   {"log", UnaryOp::Log},
    {"abs", UnaryOp::Abs},   {"sqrt", UnaryOp::Sqrt}, {"sign", UnaryOp::Sign},
    {"floor", UnaryOp::Floor}, {"neg", UnaryOp::Neg},
};

const std::map<std::string_view, ReduceOp> kReduceFns = {
    {"sum", ReduceOp::Sum}, {"mean", ReduceOp::Mean}, {"prod", ReduceOp::Prod},
    {"max", ReduceOp::Max}, {"min", ReduceOp::Min},
};

bool is_reserved(std::string_view name) {
    return name == "x" || name == "pi" || name == "e" || name == "let" || name == "where" ||
           name == "roll" || name == "min2" || name == "max2" || kUnaryFns.count(name) > 0 ||
           kReduceFns.count(name) > 0;
}

class Parser {
public:
    Parser(std::string_view src, int dim) : toks_(lex(src)), dim_(dim) {}

    ExprPtr parse() {
        ExprPtr e = parse_expr();
        if (peek().kind != Tok::End)
            fail("unexpected trailing input", {"operator", "end of input"});
        return e;
    }

private:
    const Token& peek(int ahead = 0) const {
        std::size_t i = std::min(pos_ + static_cast<std::size_t>(ahead), toks_.size() - 1);
        return toks_[i];
    }
    Token take() { return toks_[std::min(pos_++, toks_.size() - 1)]; }
    bool accept(Tok k) {
        if (peek().kind == k) { ++pos_; return true; }
        return false;
    }
    void expect(Tok k, const char* what) {
        if (!accept(k)) fail(std::string("expected ") + what, {what});
    }
    [[noreturn]] void fail(std::string msg, std::vector<std::string> expected = {}) const {
        throw ExprError(ExprError::Kind::Parse, peek().offset, std::move(msg), std::move(expected));
    }

    ExprPtr node(NodeKind k, int off) {
        auto e = std::make_unique<Expr>();
        e->kind = k;
        e->src_offset = off;
        return e;
    }

    ExprPtr parse_expr() {
        if (peek().kind == Tok::Ident && peek().text == "let") return parse_let();
        return parse_additive();
    }

    ExprPtr parse_let() {
        int off = take().offset;  // 'let'
        if (peek().kind != Tok::Ident) fail("expected binding name", {"identifier"});
        Token name = take();
        if (is_reserved(name.text))
            throw ExprError(ExprError::Kind::Parse, name.offset,
                            "'" + name.text + "' is reserved and cannot be bound");
        expect(Tok::Assign, "'='");
        ExprPtr bound = parse_expr();
        expect(Tok::Semicolon, "';'");
        scope_.push_back(name.text);
        ExprPtr body = parse_expr();
        scope_.pop_back();
        ExprPtr e = node(NodeKind::Let, off);
        e->name = name.text;
        e->kids.push_back(std::move(bound));
        e->kids.push_back(std::move(body));
        return e;
    }

    ExprPtr parse_additive() {
        ExprPtr lhs = parse_mult();
        for (;;) {
            if (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
                Token op = take();
                ExprPtr rhs = parse_mult();
                ExprPtr e = node(NodeKind::Binary, op.offset);
                e->bop = (op.kind == Tok::Plus) ? BinaryOp::Add : BinaryOp::Sub;
                e->kids.push_back(std::move(lhs));
                e->kids.push_back(std::move(rhs));
                lhs = std::move(e);
            } else {
                return lhs;
            }
        }
    }

    ExprPtr parse_mult() {
        ExprPtr lhs = parse_unary();
        for (;;) {
            if (peek().kind == Tok::Star || peek().kind == Tok::Slash) {
                Token op = take();
                ExprPtr rhs = parse_unary();
                ExprPtr e = node(NodeKind::Binary, op.offset);
                e->bop = (op.kind == Tok::Star) ? BinaryOp::Mul : BinaryOp::Div;
                e->kids.push_back(std::move(lhs));
                e->kids.push_back(std::move(rhs));
                lhs = std::move(e);
            } else {
                return lhs;
            }
        }
    }

    ExprPtr parse_unary() {
        if (peek().kind == Tok::Minus) {
            Token op = take();
            ExprPtr child = parse_unary();
            // fold literal negation so canonical printing round-trips
            if (child->kind == NodeKind::Constant) {
                child->value = -child->value;
                child->named_const = 0;
                child->src_offset = op.offset;
                return child;
            }
            ExprPtr e = node(NodeKind::Unary, op.offset);
            e->uop = UnaryOp::Neg;
            e->kids.push_back(std::move(child));
            return e;
        }
        return parse_power();
    }

    ExprPtr parse_power() {
        ExprPtr base = parse_atom();
        if (peek().kind == Tok::Caret) {
            Token op = take();
            ExprPtr exponent = parse_unary();  // right-assoc; allows x^-2
            ExprPtr e = node(NodeKind::Binary, op.offset);
            e->bop = BinaryOp::Pow;
            e->kids.push_back(std::move(base));
            e->kids.push_back(std::move(exponent));
            return e;
        }
        return base;
    }

    int parse_int_literal(const char* what) {
        bool negative = accept(Tok::Minus);
        if (peek().kind != Tok::Number) fail(std::string("expected ") + what, {"integer"});
        Token t = take();
        if (t.number != std::floor(t.number))
            throw ExprError(ExprError::Kind::Parse, t.offset, std::string(what) + " must be an integer");
        double v = negative ? -t.number : t.number;
        return static_cast<int>(v);
    }

    int resolve_index(int raw, int offset) const {
        int idx = raw < 0 ? dim_ + raw : raw;
        if (idx < 0 || idx >= dim_)
            throw ExprError(ExprError::Kind::Shape, offset,
                            "coordinate index " + std::to_string(raw) + " out of range for dimension " +
                                std::to_string(dim_));
        return idx;
    }

    ExprPtr parse_coord(int off) {
        if (!accept(Tok::LBracket)) return node(NodeKind::CoordAll, off);
        int first_off = peek().offset;
        int first = parse_int_literal("coordinate index");
        if (accept(Tok::Colon)) {
            int second_off = peek().offset;
            int second = parse_int_literal("slice end");
            expect(Tok::RBracket, "']'");
            int lo = first < 0 ? dim_ + first : first;
            int hi = second < 0 ? dim_ + second : second;
            if (lo < 0 || hi > dim_ || lo >= hi)
                throw ExprError(ExprError::Kind::Shape, second_off,
                                "bad slice [" + std::to_string(first) + ":" + std::to_string(second) +
                                    "] for dimension " + std::to_string(dim_));
            ExprPtr e = node(NodeKind::CoordSlice, off);
            e->lo = lo;
            e->hi = hi;
            return e;
        }
        expect(Tok::RBracket, "']'");
        ExprPtr e = node(NodeKind::CoordIndex, off);
        e->index = resolve_index(first, first_off);
        return e;
    }

    ExprPtr parse_atom() {
        const Token& t = peek();
        if (t.kind == Tok::Number) {
            Token num = take();
            ExprPtr e = node(NodeKind::Constant, num.offset);
            e->value = num.number;
            return e;
        }
        if (t.kind == Tok::LParen) {
            take();
            ExprPtr inner = parse_expr();
            expect(Tok::RParen, "')'");
            return inner;
        }
        if (t.kind != Tok::Ident)
            fail("expected expression", {"number", "identifier", "'('", "'-'"});

        Token id = take();
        if (id.text == "pi" || id.text == "e") {
            ExprPtr e = node(NodeKind::Constant, id.offset);
            e->value = (id.text == "pi") ? std::numbers::pi : std::numbers::e;
            e->named_const = (id.text == "pi") ? 1 : 2;
            return e;
        }
        if (id.text == "x") return parse_coord(id.offset);
        if (auto it = kUnaryFns.find(id.text); it != kUnaryFns.end()) {
            expect(Tok::LParen, "'('");
            ExprPtr arg = parse_expr();
            expect(Tok::RParen, "')'");
            ExprPtr e = node(NodeKind::Unary, id.offset);
            e->uop = it->second;
            e->kids.push_back(std::move(arg));
            return e;
        }
        if (auto it = kReduceFns.find(id.text); it != kReduceFns.end()) {
            expect(Tok::LParen, "'('");
            ExprPtr arg = parse_expr();
            expect(Tok::RParen, "')'");
            ExprPtr e = node(NodeKind::Reduce, id.offset);
            e->rop = it->second;
            e->kids.push_back(std::move(arg));
            return e;
        }
        if (id.text == "min2" || id.text == "max2") {
            expect(Tok::LParen, "'('");
            ExprPtr a = parse_expr();
            expect(Tok::Comma, "','");
            ExprPtr b = parse_expr();
            expect(Tok::RParen, "')'");
            ExprPtr e = node(NodeKind::Binary, id.offset);
            e->bop = (id.text == "min2") ? BinaryOp::Min2 : BinaryOp::Max2;
            e->kids.push_back(std::move(a));
            e->kids.push_back(std::move(b));
            return e;
        }
        if (id.text == "where") {
            expect(Tok::LParen, "'('");
            ExprPtr lhs = parse_expr();
            CmpOp cmp;
            switch (peek().kind) {
                case Tok::Lt: cmp = CmpOp::Lt; break;
                case Tok::Le: cmp = CmpOp::Le; break;
                case Tok::Gt: cmp = CmpOp::Gt; break;
                case Tok::Ge: cmp = CmpOp::Ge; break;
                case Tok::Eq: cmp = CmpOp::Eq; break;
                case Tok::Ne: cmp = CmpOp::Ne; break;
                default: fail("expected comparison in where()", {"'<'", "'<='", "'>'", "'>='", "'=='", "'!='"});
            }
            take();
            ExprPtr rhs = parse_expr();
            expect(Tok::Comma, "','");
            ExprPtr then_e = parse_expr();
            expect(Tok::Comma, "','");
            ExprPtr else_e = parse_expr();
            expect(Tok::RParen, "')'");
            ExprPtr e = node(NodeKind::Where, id.offset);
            e->cmp = cmp;
            e->kids.push_back(std::move(lhs));
            e->kids.push_back(std::move(rhs));
            e->kids.push_back(std::move(then_e));
            e->kids.push_back(std::move(else_e));
            return e;
        }
        if (id.text == "roll") {
            expect(Tok::LParen, "'('");
            ExprPtr v = parse_expr();
            expect(Tok::Comma, "','");
            int k = parse_int_literal("roll shift");
            expect(Tok::RParen, "')'");
            ExprPtr e = node(NodeKind::Roll, id.offset);
            e->index = k;
            e->kids.push_back(std::move(v));
            return e;
        }
        if (id.text == "let") fail("misplaced 'let'");
        if (std::find(scope_.begin(), scope_.end(), id.text) != scope_.end()) {
            ExprPtr e = node(NodeKind::VarRef, id.offset);
            e->name = id.text;
            return e;
        }
        throw ExprError(ExprError::Kind::Parse, id.offset, "unknown identifier '" + id.text + "'",
                        {"'x'", "'pi'", "'e'", "function name", "bound variable"});
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    int dim_;
    std::vector<std::string> scope_;
};

// ---------------------------------------------------------------------------
// shape check + compile

struct CompileCtx {
    std::vector<Program::Instr> setup;
    std::vector<Program::Instr> tape;
    int next_slot = 0;
    std::vector<std::pair<std::string, std::pair<int, int>>> env;  // name -> (slot, len)

    int alloc(int len) {
        int s = next_slot;
        next_slot += len;
        return s;
    }
};

[[noreturn]] void shape_error(const Expr& e, const std::string& msg) {
    throw ExprError(ExprError::Kind::Shape, e.src_offset, msg);
}

// Returns (slot, len). len == 1 means per-sample scalar.
std::pair<int, int> compile_node(const Expr& e, int dim, CompileCtx& ctx) {
    using I = Program::Instr;
    switch (e.kind) {
        case NodeKind::Constant: {
            int slot = ctx.alloc(1);
            I ins;
            ins.op = I::Op::Const;
            ins.out = slot;
            ins.len = 1;
            ins.value = e.value;
            ctx.setup.push_back(ins);
            return {slot, 1};
        }
        case NodeKind::CoordAll: {
            int slot = ctx.alloc(dim);
            I ins;
            ins.op = I::Op::CoordAll;
            ins.out = slot;
            ins.len = dim;
            ctx.tape.push_back(ins);
            return {slot, dim};
        }
        case NodeKind::CoordIndex: {
            int slot = ctx.alloc(1);
            I ins;
            ins.op = I::Op::CoordIdx;
            ins.out = slot;
            ins.len = 1;
            ins.idx = e.index;
            ctx.tape.push_back(ins);
            return {slot, 1};
        }
        case NodeKind::CoordSlice: {
            int len = e.hi - e.lo;
            int slot = ctx.alloc(len);
            I ins;
            ins.op = I::Op::Slice;
            ins.out = slot;
            ins.len = len;
            ins.idx = e.lo;
            ins.hi = e.hi;
            ctx.tape.push_back(ins);
            return {slot, len};
        }
        case NodeKind::VarRef: {
            for (auto it = ctx.env.rbegin(); it != ctx.env.rend(); ++it)
                if (it->first == e.name) return it->second;
            shape_error(e, "unbound variable '" + e.name + "'");
        }
        case NodeKind::Let: {
            auto bound = compile_node(*e.kids[0], dim, ctx);
            ctx.env.emplace_back(e.name, bound);
            auto body = compile_node(*e.kids[1], dim, ctx);
            ctx.env.pop_back();
            return body;
        }
        case NodeKind::Unary: {
            auto [a, alen] = compile_node(*e.kids[0], dim, ctx);
            int slot = ctx.alloc(alen);
            I ins;
            ins.op = I::Op::Unary;
            ins.uop = e.uop;
            ins.out = slot;
            ins.len = alen;
            ins.a = a;
            ins.alen = alen;
            ctx.tape.push_back(ins);
            return {slot, alen};
        }
        case NodeKind::Binary: {
            auto [a, alen] = compile_node(*e.kids[0], dim, ctx);
            auto [b, blen] = compile_node(*e.kids[1], dim, ctx);
            if (alen != blen && alen != 1 && blen != 1)
                shape_error(e, "vector length mismatch (" + std::to_string(alen) + " vs " +
                                   std::to_string(blen) + ")");
            int len = std::max(alen, blen);
            int slot = ctx.alloc(len);
            I ins;
            ins.op = I::Op::Binary;
            ins.bop = e.bop;
            ins.out = slot;
            ins.len = len;
            ins.a = a;
            ins.alen = alen;
            ins.b = b;
            ins.blen = blen;
            ctx.tape.push_back(ins);
            return {slot, len};
        }
        case NodeKind::Reduce: {
            auto [a, alen] = compile_node(*e.kids[0], dim, ctx);
            int slot = ctx.alloc(1);
            I ins;
            ins.op = I::Op::Reduce;
            ins.rop = e.rop;
            ins.out = slot;
            ins.len = 1;
            ins.a = a;
            ins.alen = alen;
            ctx.tape.push_back(ins);
            return {slot, 1};
        }
        case NodeKind::Where: {
            auto [a, alen] = compile_node(*e.kids[0], dim, ctx);
            auto [b, blen] = compile_node(*e.kids[1], dim, ctx);
            auto [c, clen] = compile_node(*e.kids[2], dim, ctx);
            auto [d, dlen] = compile_node(*e.kids[3], dim, ctx);
            int len = 1;
            for (int l : {alen, blen, clen, dlen}) {
                if (l == 1) continue;
                if (len != 1 && len != l)
                    shape_error(e, "where() arm length mismatch (" + std::to_string(len) + " vs " +
                                       std::to_string(l) + ")");
                len = l;
            }
            int slot = ctx.alloc(len);
            I ins;
            ins.op = I::Op::Where;
            ins.cmp = e.cmp;
            ins.out = slot;
            ins.len = len;
            ins.a = a;
            ins.alen = alen;
            ins.b = b;
            ins.blen = blen;
            ins.c = c;
            ins.clen = clen;
            ins.d = d;
            ins.dlen = dlen;
            ctx.tape.push_back(ins);
            return {slot, len};
        }
        case NodeKind::Roll: {
            auto [a, alen] = compile_node(*e.kids[0], dim, ctx);
            if (alen == 1) return {a, 1};  // rolling a scalar is the identity
            int slot = ctx.alloc(alen);
            I ins;
            ins.op = I::Op::Roll;
            ins.out = slot;
            ins.len = alen;
            ins.a = a;
            ins.alen = alen;
            ins.idx = e.index;
            ctx.tape.push_back(ins);
            return {slot, alen};
        }
    }
    shape_error(e, "unreachable node kind");
}

// ---------------------------------------------------------------------------
// canonical printing

std::string fmt_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

const char* unary_name(UnaryOp op) {
    switch (op) {
        case UnaryOp::Sin: return "sin";
        case UnaryOp::Cos: return "cos";
        case UnaryOp::Tan: return "tan";
        case UnaryOp::Tanh: return "tanh";
        case UnaryOp::Exp: return "exp";
        case UnaryOp::Log: return "log";
        case UnaryOp::Abs: return "abs";
        case UnaryOp::Sqrt: return "sqrt";
        case UnaryOp::Sign: return "sign";
        case UnaryOp::Floor: return "floor";
        case UnaryOp::Neg: return "neg";
    }
    return "?";
}

const char* reduce_name(ReduceOp op) {
    switch (op) {
        case ReduceOp::Sum: return "sum";
        case ReduceOp::Mean: return "mean";
        case ReduceOp::Prod: return "prod";
        case ReduceOp::Max: return "max";
        case ReduceOp::Min: return "min";
    }
    return "?";
}

const char* cmp_name(CmpOp op) {
    switch (op) {
        case CmpOp::Lt: return "<";
        case CmpOp::Le: return "<=";
        case CmpOp::Gt: return ">";
        case CmpOp::Ge: return ">=";
        case CmpOp::Eq: return "==";
        case CmpOp::Ne: return "!=";
    }
    return "?";
}

// precedence levels: let/full 0, additive 1, multiplicative 2, unary 3, power-base 5
int node_level(const Expr& e) {
    switch (e.kind) {
        case NodeKind::Let: return 0;
        case NodeKind::Binary:
            switch (e.bop) {
                case BinaryOp::Add:
                case BinaryOp::Sub: return 1;
                case BinaryOp::Mul:
                case BinaryOp::Div: return 2;
                case BinaryOp::Pow: return 4;
                default: return 5;  // min2/max2 print as calls
            }
        case NodeKind::Unary: return e.uop == UnaryOp::Neg ? 3 : 5;
        case NodeKind::Constant: return e.value < 0 ? 3 : 5;
        default: return 5;
    }
}

void print_rec(const Expr& e, int min_level, std::string& out) {
    const bool parens = node_level(e) < min_level;
    if (parens) out += '(';
    switch (e.kind) {
        case NodeKind::Constant:
            if (e.named_const == 1) out += "pi";
            else if (e.named_const == 2) out += "e";
            else out += fmt_number(e.value);
            break;
        case NodeKind::CoordAll: out += 'x'; break;
        case NodeKind::CoordIndex: out += "x[" + std::to_string(e.index) + "]"; break;
        case NodeKind::CoordSlice:
            out += "x[" + std::to_string(e.lo) + ":" + std::to_string(e.hi) + "]";
            break;
        case NodeKind::VarRef: out += e.name; break;
        case NodeKind::Unary:
            if (e.uop == UnaryOp::Neg) {
                out += '-';
                print_rec(*e.kids[0], 3, out);
            } else {
                out += unary_name(e.uop);
                out += '(';
                print_rec(*e.kids[0], 0, out);
                out += ')';
            }
            break;
        case NodeKind::Binary:
            switch (e.bop) {
                case BinaryOp::Add:
                case BinaryOp::Sub:
                    print_rec(*e.kids[0], 1, out);
                    out += (e.bop == BinaryOp::Add) ? '+' : '-';
                    print_rec(*e.kids[1], 2, out);
                    break;
                case BinaryOp::Mul:
                case BinaryOp::Div:
                    print_rec(*e.kids[0], 2, out);
                    out += (e.bop == BinaryOp::Mul) ? '*' : '/';
                    print_rec(*e.kids[1], 3, out);
                    break;
                case BinaryOp::Pow:
                    print_rec(*e.kids[0], 5, out);
                    out += '^';
                    print_rec(*e.kids[1], 3, out);
                    break;
                case BinaryOp::Min2:
                case BinaryOp::Max2:
                    out += (e.bop == BinaryOp::Min2) ? "min2(" : "max2(";
                    print_rec(*e.kids[0], 0, out);
                    out += ',';
                    print_rec(*e.kids[1], 0, out);
                    out += ')';
                    break;
            }
            break;
        case NodeKind::Reduce:
            out += reduce_name(e.rop);
            out += '(';
            print_rec(*e.kids[0], 0, out);
            out += ')';
            break;
        case NodeKind::Where:
            out += "where(";
            print_rec(*e.kids[0], 0, out);
            out += cmp_name(e.cmp);
            print_rec(*e.kids[1], 0, out);
            out += ',';
            print_rec(*e.kids[2], 0, out);
            out += ',';
            print_rec(*e.kids[3], 0, out);
            out += ')';
            break;
        case NodeKind::Roll:
            out += "roll(";
            print_rec(*e.kids[0], 0, out);
            out += ',';
            out += std::to_string(e.index);
            out += ')';
            break;
        case NodeKind::Let:
            out += "let ";
            out += e.name;
            out += " = ";
            if (e.kids[0]->kind == NodeKind::Let) {
                out += '(';
                print_rec(*e.kids[0], 0, out);
                out += ')';
            } else {
                print_rec(*e.kids[0], 0, out);
            }
            out += "; ";
            print_rec(*e.kids[1], 0, out);
            break;
    }
    if (parens) out += ')';
}

}  // namespace

// ---------------------------------------------------------------------------
// public surface

ExprPtr Expr::clone() const {
    auto e = std::make_unique<Expr>();
    e->kind = kind;
    e->value = value;
    e->named_const = named_const;
    e->index = index;
    e->lo = lo;
    e->hi = hi;
    e->name = name;
    e->uop = uop;
    e->bop = bop;
    e->rop = rop;
    e->cmp = cmp;
    e->src_offset = src_offset;
    e->kids.reserve(kids.size());
    for (const auto& k : kids) e->kids.push_back(k->clone());
    return e;
}

ExprPtr make_const(double v) {
    auto e = std::make_unique<Expr>();
    e->kind = NodeKind::Constant;
    e->value = v;
    return e;
}

ExprPtr make_unary(UnaryOp op, ExprPtr child) {
    auto e = std::make_unique<Expr>();
    e->kind = NodeKind::Unary;
    e->uop = op;
    e->kids.push_back(std::move(child));
    return e;
}

ExprPtr make_binary(BinaryOp op, ExprPtr a, ExprPtr b) {
    auto e = std::make_unique<Expr>();
    e->kind = NodeKind::Binary;
    e->bop = op;
    e->kids.push_back(std::move(a));
    e->kids.push_back(std::move(b));
    return e;
}

ExprPtr make_reduce(ReduceOp op, ExprPtr child) {
    auto e = std::make_unique<Expr>();
    e->kind = NodeKind::Reduce;
    e->rop = op;
    e->kids.push_back(std::move(child));
    return e;
}

bool structurally_equal(const Expr& a, const Expr& b) {
    if (a.kind != b.kind || a.kids.size() != b.kids.size()) return false;
    switch (a.kind) {
        case NodeKind::Constant:
            if (a.value != b.value) return false;
            break;
        case NodeKind::CoordIndex:
            if (a.index != b.index) return false;
            break;
        case NodeKind::CoordSlice:
            if (a.lo != b.lo || a.hi != b.hi) return false;
            break;
        case NodeKind::VarRef:
        case NodeKind::Let:
            if (a.name != b.name) return false;
            break;
        case NodeKind::Unary:
            if (a.uop != b.uop) return false;
            break;
        case NodeKind::Binary:
            if (a.bop != b.bop) return false;
            break;
        case NodeKind::Reduce:
            if (a.rop != b.rop) return false;
            break;
        case NodeKind::Where:
            if (a.cmp != b.cmp) return false;
            break;
        case NodeKind::Roll:
            if (a.index != b.index) return false;
            break;
        default: break;
    }
    for (std::size_t i = 0; i < a.kids.size(); ++i)
        if (!structurally_equal(*a.kids[i], *b.kids[i])) return false;
    return true;
}

std::string print_canonical(const Expr& e) {
    std::string out;
    print_rec(e, 0, out);
    return out;
}

Program compile_program(ExprPtr root, int dim, std::string source) {
    if (dim < 1) throw ExprError(ExprError::Kind::Shape, -1, "dimension must be >= 1");
    CompileCtx ctx;
    auto [slot, len] = compile_node(*root, dim, ctx);
    if (len != 1)
        throw ExprError(ExprError::Kind::Shape, root->src_offset,
                        "program must reduce to a per-sample scalar (got a vector of length " +
                            std::to_string(len) + ")");
    Program p;
    p.root_ = std::move(root);
    p.dim_ = dim;
    p.canonical_ = print_canonical(*p.root_);
    p.source_ = source.empty() ? p.canonical_ : std::move(source);
    p.setup_ = std::move(ctx.setup);
    p.tape_ = std::move(ctx.tape);
    p.scratch_size_ = ctx.next_slot;
    p.result_slot_ = slot;
    return p;
}

Program parse_program(std::string_view source, int dim) {
    Parser parser(source, dim);
    ExprPtr root = parser.parse();
    return compile_program(std::move(root), dim, std::string(source));
}

std::uint64_t Program::identity_key() const {
    return derive_seed(fnv1a(canonical_), static_cast<std::uint64_t>(dim_));
}

std::vector<double> Program::evaluate(const double* points, std::size_t m) const {
    std::vector<double> scratch(static_cast<std::size_t>(scratch_size_), 0.0);
    for (const Instr& ins : setup_) scratch[static_cast<std::size_t>(ins.out)] = ins.value;

    std::vector<double> out(m);
    for (std::size_t s = 0; s < m; ++s) {
        const double* x = points + s * static_cast<std::size_t>(dim_);
        for (const Instr& ins : tape_) {
            double* dst = scratch.data() + ins.out;
            switch (ins.op) {
                case Instr::Op::CoordAll:
                    for (int i = 0; i < ins.len; ++i) dst[i] = x[i];
                    break;
                case Instr::Op::CoordIdx:
                    dst[0] = x[ins.idx];
                    break;
                case Instr::Op::Slice:
                    for (int i = 0; i < ins.len; ++i) dst[i] = x[ins.idx + i];
                    break;
                case Instr::Op::Unary: {
                    const double* a = scratch.data() + ins.a;
                    for (int i = 0; i < ins.len; ++i) dst[i] = apply_unary(ins.uop, a[i]);
                    break;
                }
                case Instr::Op::Binary: {
                    const double* a = scratch.data() + ins.a;
                    const double* b = scratch.data() + ins.b;
                    const int astep = ins.alen == 1 ? 0 : 1;
                    const int bstep = ins.blen == 1 ? 0 : 1;
                    for (int i = 0; i < ins.len; ++i)
                        dst[i] = apply_binary(ins.bop, a[i * astep], b[i * bstep]);
                    break;
                }
                case Instr::Op::Reduce: {
                    const double* a = scratch.data() + ins.a;
                    double acc = a[0];
                    switch (ins.rop) {
                        case ReduceOp::Sum:
                        case ReduceOp::Mean:
                            for (int i = 1; i < ins.alen; ++i) acc += a[i];
                            if (ins.rop == ReduceOp::Mean) acc /= ins.alen;
                            break;
                        case ReduceOp::Prod:
                            for (int i = 1; i < ins.alen; ++i) acc *= a[i];
                            break;
                        case ReduceOp::Max:
                            for (int i = 1; i < ins.alen; ++i) acc = std::max(acc, a[i]);
                            break;
                        case ReduceOp::Min:
                            for (int i = 1; i < ins.alen; ++i) acc = std::min(acc, a[i]);
                            break;
                    }
                    dst[0] = acc;
                    break;
                }
                case Instr::Op::Where: {
                    const double* a = scratch.data() + ins.a;
                    const double* b = scratch.data() + ins.b;
                    const double* c = scratch.data() + ins.c;
                    const double* d = scratch.data() + ins.d;
                    const int as = ins.alen == 1 ? 0 : 1, bs = ins.blen == 1 ? 0 : 1;
                    const int cs = ins.clen == 1 ? 0 : 1, ds = ins.dlen == 1 ? 0 : 1;
                    for (int i = 0; i < ins.len; ++i)
                        dst[i] = apply_cmp(ins.cmp, a[i * as], b[i * bs]) ? c[i * cs] : d[i * ds];
                    break;
                }
                case Instr::Op::Roll: {
                    const double* a = scratch.data() + ins.a;
                    const int n = ins.alen;
                    const int k = ((ins.idx % n) + n) % n;
                    for (int i = 0; i < n; ++i) dst[i] = a[(i - k + n) % n];
                    break;
                }
                case Instr::Op::Const:
                    break;  // handled in setup
            }
        }
        out[s] = scratch[static_cast<std::size_t>(result_slot_)];
    }
    return out;
}

std::vector<double> Program::evaluate(const std::vector<double>& points) const {
    return evaluate(points.data(), points.size() / static_cast<std::size_t>(dim_));
}

const char* failure_reason_name(FailureReason r) {
    switch (r) {
        case FailureReason::None: return "none";
        case FailureReason::ParseError: return "parse_error";
        case FailureReason::ShapeError: return "shape_error";
        case FailureReason::NonFiniteOutput: return "non_finite_output";
        case FailureReason::NonDeterministic: return "non_deterministic";
        case FailureReason::ConstantOutput: return "constant_output";
    }
    return "?";
}

namespace {

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
    return true;
}

}  // namespace

ValidationReport validate(const Program& program, int dim, const std::vector<double>& lo,
                          const std::vector<double>& hi, int n_probe, std::uint64_t seed) {
    ValidationReport rep;
    rep.n_probe = n_probe;
    if (program.dim() != dim) {
        rep.reason = FailureReason::ShapeError;
        rep.detail = "program dimension " + std::to_string(program.dim()) + " != requested " +
                     std::to_string(dim);
        return rep;
    }

    auto pts = latin_hypercube(static_cast<std::size_t>(n_probe), static_cast<std::size_t>(dim),
                               derive_seed(seed, "validate"));
    scale_to_box(pts, static_cast<std::size_t>(dim), lo, hi);

    const std::vector<double> ys = program.evaluate(pts);

    double mn = ys[0], mx = ys[0], sum = 0.0;
    for (double v : ys) {
        if (!std::isfinite(v)) {
            rep.reason = FailureReason::NonFiniteOutput;
            rep.detail = "probe produced a non-finite value";
            return rep;
        }
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        sum += v;
    }
    rep.probe_min = mn;
    rep.probe_max = mx;
    rep.probe_mean = sum / static_cast<double>(ys.size());

    if (!bitwise_equal(ys, program.evaluate(pts))) {
        rep.reason = FailureReason::NonDeterministic;
        rep.detail = "repeated probe disagreed bitwise";
        return rep;
    }

    // per-sample independence spot check on a prefix of the probe
    const std::size_t spot = std::min<std::size_t>(8, ys.size());
    for (std::size_t i = 0; i < spot; ++i) {
        auto one = program.evaluate(pts.data() + i * static_cast<std::size_t>(dim), 1);
        if (std::bit_cast<std::uint64_t>(one[0]) != std::bit_cast<std::uint64_t>(ys[i])) {
            rep.reason = FailureReason::ShapeError;
            rep.detail = "batch output depends on batch composition";
            return rep;
        }
    }

    if ((mx - mn) / std::max(1.0, std::fabs(mx)) < 1e-10) {
        rep.reason = FailureReason::ConstantOutput;
        rep.detail = "probe output is constant to tolerance";
        return rep;
    }

    rep.valid = true;
    return rep;
}

ValidationReport validate_source(std::string_view source, int dim, const std::vector<double>& lo,
                                 const std::vector<double>& hi, int n_probe, std::uint64_t seed) {
    try {
        Program p = parse_program(source, dim);
        return validate(p, dim, lo, hi, n_probe, seed);
    } catch (const ExprError& e) {
        ValidationReport rep;
        rep.reason = e.kind == ExprError::Kind::Parse ? FailureReason::ParseError
                                                      : FailureReason::ShapeError;
        rep.detail = e.what();
        if (e.offset >= 0) rep.detail += " (offset " + std::to_string(e.offset) + ")";
        return rep;
    }
}

const std::string& grammar_text() {
    static const std::string text =
        "Write exactly one expression. It is evaluated per sample on a d-dimensional\n"
        "input vector and must reduce to a single scalar per sample.\n"
        "  x          the coordinate vector (length d)\n"
        "  x[i]       one coordinate (0-based; negative i counts from the end)\n"
        "  x[a:b]     coordinates a..b-1 as a shorter vector\n"
        "  pi, e      constants; plain decimal literals are allowed\n"
        "  + - * / ^  arithmetic; precedence ^ over unary - over * / over + -\n"
        "  unary      sin cos tan tanh exp log abs sqrt sign floor neg\n"
        "  binary     min2(a,b) max2(a,b)\n"
        "  reduce     sum mean prod max min  (vector -> per-sample scalar)\n"
        "  where      where(a < b, t, f); comparisons: < <= > >= == !=\n"
        "  roll       roll(v, k) cyclically shifts a vector by integer k\n"
        "  let        let z = <expr>; <expr>  (z names the bound value; <= 4 lets)\n"
        "Scalars broadcast against vectors; two vectors must have equal length.\n"
        "log, division and fractional powers of negatives are guarded, never errors.\n"
        "No loops, no recursion, no randomness.";
    return text;
}

}  // namespace evobench
