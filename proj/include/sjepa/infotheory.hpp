#pragma once

// Exact information quantities over small discrete joint distributions, and
// brute-force audits of the grouping results (multiinformation reduction under
// deterministic grouping, and the claim that grouping raises information about
// a latent). All quantities are in nats.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sjepa/rng.hpp"

namespace sjepa::info {

inline constexpr std::size_t kMaxVariables = 8;
inline constexpr std::size_t kMaxTableSize = std::size_t{1} << 20;
inline constexpr double kInequalityTol = 1e-9;

/// Probability table over n discrete variables, row-major (last variable fastest).
struct JointDistribution {
    std::vector<std::size_t> cards;
    std::vector<double> pmf;

    std::size_t n_vars() const { return cards.size(); }
    std::size_t size() const { return pmf.size(); }

    /// Throws ContractError on negative mass, total mass off by more than 1e-12,
    /// or a table outside the enumeration bound.
    void validate() const;

    std::size_t index(std::span<const std::size_t> config) const;
    void decode(std::size_t flat, std::span<std::size_t> config) const;

    /// Independent product of the given per-variable distributions.
    static JointDistribution product(const std::vector<std::vector<double>>& marginals);
};

struct Divergence {
    double nats = 0.0;
    /// Set when p puts mass where q has none; nats is +inf then.
    bool infinite = false;
};

Divergence kl_divergence(const JointDistribution& p, const JointDistribution& q);
double entropy(const JointDistribution& p);

/// Distribution of the listed variables (in the listed order).
JointDistribution marginal(const JointDistribution& p, std::span<const std::size_t> vars);

/// Product of the single-variable marginals, on the same table layout as p.
JointDistribution product_of_marginals(const JointDistribution& p);

/// KL(p || prod_i p_i).
double multiinformation(const JointDistribution& p);

/// sum_i H(X_i) - H(X_1..X_n); independent route to the same quantity.
double multiinformation_from_entropies(const JointDistribution& p);

/// I(A; B) for disjoint variable blocks A and B.
double mutual_information(const JointDistribution& p, std::span<const std::size_t> a, std::span<const std::size_t> b);

/// Multiinformation among variable blocks, treating each block as one variable.
double block_multiinformation(const JointDistribution& p, const std::vector<std::vector<std::size_t>>& blocks);

/// Partition S_1..S_m of the variables plus deterministic maps f_j given as
/// lookup tables over the row-major configurations of each subset.
struct GroupingMap {
    std::vector<std::vector<std::size_t>> subsets;
    std::vector<std::vector<std::size_t>> tables;
    std::vector<std::size_t> out_cards;

    std::size_t groups() const { return subsets.size(); }
    void validate(const std::vector<std::size_t>& cards) const;

    /// m = n, f_j the identity on X_j.
    static GroupingMap identity(const std::vector<std::size_t>& cards);
};

/// Pushforward of p through the grouping: P(g) = sum of p over preimages of g.
JointDistribution apply_grouping(const JointDistribution& p, const GroupingMap& g);

/// Symmetric Dirichlet(1) sample over the full table.
JointDistribution random_distribution(const std::vector<std::size_t>& cards, Rng& rng);

/// Random partition into m groups (m drawn from [min_groups, max_groups]) with
/// random lookup-table maps into alphabets of random size.
GroupingMap random_grouping(const std::vector<std::size_t>& cards, std::size_t min_groups, std::size_t max_groups,
                            Rng& rng);

std::string to_json(const JointDistribution& p);
std::string to_json(const GroupingMap& g);

// ---------------------------------------------------------------------------
// Grouping lemma audit.

struct Lemma1Trial {
    std::uint64_t seed = 0;
    std::vector<std::size_t> cards;
    std::size_t groups = 0;
    double info_x = 0.0;           // I(X_1; ...; X_n)
    double info_g = 0.0;           // I(G_1; ...; G_m)
    double margin = 0.0;           // info_x - info_g
    double inter_group = 0.0;      // info_x - sum of within-group multiinformations
    double within_group = 0.0;     // sum of within-group multiinformations
    bool dependent = false;        // inter_group > dependence threshold
    bool strict = false;           // margin > strict threshold
    bool violation = false;        // info_g > info_x + tolerance
};

struct Lemma1Options {
    std::size_t min_vars = 3;
    std::size_t max_vars = 5;
    std::size_t max_card = 3;
    double tolerance = kInequalityTol;
    double dependence_threshold = 1e-6;
    double strict_threshold = 1e-12;
};

struct Lemma1Report {
    std::size_t trials = 0;
    std::size_t violations = 0;
    std::size_t dependent = 0;
    std::size_t strict_among_dependent = 0;
    double min_margin = 0.0;
    double min_margin_dependent = 0.0;
    std::vector<Lemma1Trial> records;
    std::vector<std::string> violation_dumps;  // offending distribution + grouping, JSON
};

Lemma1Trial lemma1_trial(const JointDistribution& p, const GroupingMap& g, const Lemma1Options& options = {});

/// Random (distribution, grouping) trials. Trial i is seeded from (seed, i) so
/// the report does not depend on scheduling; trials run on the worker pool.
/// Groupings always merge at least two variables (m < n).
Lemma1Report verify_lemma1(std::size_t trials, std::uint64_t seed, const Lemma1Options& options = {});

// ---------------------------------------------------------------------------
// Latent-model audit.

/// Joint distribution over (Z_1..Z_k, X_1..X_n); the first latent_vars variables are Z.
struct LatentModel {
    JointDistribution joint;
    std::size_t latent_vars = 1;

    std::vector<std::size_t> latent_indices() const;
    std::vector<std::size_t> observed_indices() const;
    std::vector<std::size_t> observed_cards() const;
};

enum class Claim2Status {
    sufficient,   // I(Z;G) == I(Z;X) within tolerance
    strict_dpi,   // I(Z;G) < I(Z;X): the claim I(Z;G) >= I(Z;X) fails
    dpi_violated  // I(Z;G) > I(Z;X) + tolerance; impossible for exact arithmetic
};

std::string to_string(Claim2Status s);

struct Theorem1Result {
    double info_x = 0.0;  // I(X_1; ...; X_n)
    double info_g = 0.0;  // I(G_1; ...; G_m)
    double mi_zx = 0.0;   // I(Z; X)
    double mi_zg = 0.0;   // I(Z; G)
    double inter_group = 0.0;
    bool claim1_holds = false;   // info_g <= info_x + tol
    bool claim1_strict = false;  // info_x - info_g > strict threshold
    Claim2Status claim2 = Claim2Status::sufficient;
};

/// Computes all four quantities exactly. The grouping acts on the X block only
/// (variable indices relative to X).
Theorem1Result verify_theorem1(const LatentModel& model, const GroupingMap& g, double tolerance = kInequalityTol);

struct Theorem1Case {
    std::string label;
    Theorem1Result result;
};

struct Theorem1Report {
    std::size_t trials = 0;
    std::size_t dpi_violations = 0;
    std::size_t sufficient = 0;
    std::size_t strict_dpi = 0;
    std::size_t claim1_violations = 0;
    double max_dpi_excess = 0.0;  // max of I(Z;G) - I(Z;X) over random trials
    std::vector<Theorem1Case> sufficient_cases;   // constructed; equality expected
    std::vector<Theorem1Case> counterexamples;    // constructed; strict DPI expected
    std::vector<Theorem1Result> records;
};

/// Random latent-model trials plus constructed sufficient-statistic cases and
/// constructed counterexamples to the claim as stated.
Theorem1Report audit_theorem1(std::size_t trials, std::uint64_t seed, std::size_t constructed = 100);

/// Z uniform binary, X = (Z, N) with independent noise N of the given bias.
LatentModel copy_plus_noise_model(double noise_bias);

}  // namespace sjepa::info
