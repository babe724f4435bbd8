#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evobench {

enum class UnaryOp { Sin, Cos, Tan, Tanh, Exp, Log, Abs, Sqrt, Sign, Floor, Neg };
enum class BinaryOp { Add, Sub, Mul, Div, Pow, Min2, Max2 };
enum class ReduceOp { Sum, Mean, Prod, Max, Min };
enum class CmpOp { Lt, Le, Gt, Ge, Eq, Ne };

enum class NodeKind {
    Constant,    // scalar literal (also pi / e)
    CoordAll,    // x
    CoordIndex,  // x[i]
    CoordSlice,  // x[a:b]
    VarRef,      // let-bound name
    Unary,
    Binary,
    Reduce,
    Where,  // kids: cmp-lhs, cmp-rhs, then, else
    Roll,   // kids: vector; shift in `index`
    Let,    // kids: bound, body
};

struct Expr;
using ExprPtr = std::unique_ptr<Expr>;

struct Expr {
    NodeKind kind{};
    double value = 0.0;    // Constant
    int named_const = 0;   // printing hint: 0 plain, 1 pi, 2 e
    int index = 0;         // CoordIndex; Roll shift
    int lo = 0, hi = 0;    // CoordSlice, half open [lo, hi)
    std::string name;      // VarRef / Let
    UnaryOp uop{};
    BinaryOp bop{};
    ReduceOp rop{};
    CmpOp cmp{};
    std::vector<ExprPtr> kids;
    int src_offset = -1;  // byte offset in the original source, -1 for synthesized nodes

    ExprPtr clone() const;
};

ExprPtr make_const(double v);
ExprPtr make_unary(UnaryOp op, ExprPtr child);
ExprPtr make_binary(BinaryOp op, ExprPtr a, ExprPtr b);
ExprPtr make_reduce(ReduceOp op, ExprPtr child);

/// Structural equality; ignores source offsets and printing hints.
bool structurally_equal(const Expr& a, const Expr& b);

/// Parse or shape/binding failure. `offset` is a byte offset into the source
/// (-1 when not attributable); `expected` lists acceptable tokens at that point.
class ExprError : public std::runtime_error {
public:
    enum class Kind { Parse, Shape };

    ExprError(Kind kind, int offset, std::string message, std::vector<std::string> expected = {})
        : std::runtime_error(std::move(message)), kind(kind), offset(offset), expected(std::move(expected)) {}

    Kind kind;
    int offset;
    std::vector<std::string> expected;
};

/// A parsed, shape-checked, compiled program. Immutable after construction;
/// evaluate() is pure and safe to call concurrently.
class Program {
public:
    struct Instr {
        enum class Op { Const, CoordAll, CoordIdx, Slice, Unary, Binary, Reduce, Where, Roll };
        Op op{};
        int out = 0, len = 0;
        int a = -1, alen = 0;
        int b = -1, blen = 0;
        int c = -1, clen = 0;
        int d = -1, dlen = 0;
        double value = 0.0;
        int idx = 0, hi = 0;
        UnaryOp uop{};
        BinaryOp bop{};
        ReduceOp rop{};
        CmpOp cmp{};
    };

    const Expr& root() const { return *root_; }
    int dim() const { return dim_; }
    const std::string& source() const { return source_; }
    const std::string& canonical_source() const { return canonical_; }

    /// Evaluate at m points (row-major, m x dim). Total-function semantics:
    /// guarded log/division/power never throw; non-finite values may still
    /// arise (e.g. exp overflow) and are the probe's business, not ours.
    std::vector<double> evaluate(const double* points, std::size_t m) const;
    std::vector<double> evaluate(const std::vector<double>& points) const;

    /// Identity key: hash of (canonical source, dim). Two programs with the
    /// same key are behaviorally identical everywhere we care.
    std::uint64_t identity_key() const;

private:
    friend Program compile_program(ExprPtr root, int dim, std::string source);

    ExprPtr root_;
    int dim_ = 0;
    std::string source_;
    std::string canonical_;
    std::vector<Instr> setup_;  // constants, filled once per evaluate() call
    std::vector<Instr> tape_;   // per-sample instructions
    int scratch_size_ = 0;
    int result_slot_ = 0;
};

/// Parse source into a compiled program for the given dimension.
/// Throws ExprError (Kind::Parse for grammar/identifier faults, Kind::Shape
/// for broadcast/reduction/index faults).
Program parse_program(std::string_view source, int dim);

/// Compile a programmatically built tree (used by the template generator).
/// The canonical printout becomes the source when none is supplied.
Program compile_program(ExprPtr root, int dim, std::string source = {});

std::string print_canonical(const Expr& e);

enum class FailureReason { None, ParseError, ShapeError, NonFiniteOutput, NonDeterministic, ConstantOutput };

const char* failure_reason_name(FailureReason r);

struct ValidationReport {
    bool valid = false;
    FailureReason reason = FailureReason::None;
    std::string detail;
    int n_probe = 0;
    double probe_min = 0.0, probe_max = 0.0, probe_mean = 0.0;
};

/// Probe a program over its box: finite everywhere, per-sample independent,
/// deterministic, and not constant ((max-min)/max(1,|max|) >= 1e-10).
ValidationReport validate(const Program& program, int dim, const std::vector<double>& lo,
                          const std::vector<double>& hi, int n_probe, std::uint64_t seed);

/// Same, starting from source text; parse and shape faults become report entries.
ValidationReport validate_source(std::string_view source, int dim, const std::vector<double>& lo,
                                 const std::vector<double>& hi, int n_probe, std::uint64_t seed);

/// Human-readable grammar reference (also injected into generator prompts).
const std::string& grammar_text();

}  // namespace evobench
