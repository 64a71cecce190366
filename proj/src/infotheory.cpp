#include "sjepa/infotheory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "sjepa/errors.hpp"
#include "sjepa/parallel.hpp"

namespace sjepa::info {

namespace {

std::size_t table_size(const std::vector<std::size_t>& cards) {
    std::size_t n = 1;
    for (auto c : cards) {
        if (c == 0) {
            throw ContractError("distribution: zero-size alphabet");
        }
        if (n > kMaxTableSize / c) {
            throw ContractError("distribution: table exceeds 2^20 entries");
        }
        n *= c;
    }
    return n;
}

double plogp_sum(const std::vector<double>& pmf) {
    double h = 0.0;
    for (double v : pmf) {
        if (v > 0.0) {
            h -= v * std::log(v);
        }
    }
    return h;
}

}  // namespace

void JointDistribution::validate() const {
    if (cards.empty() || cards.size() > kMaxVariables) {
        throw ContractError("distribution: need 1 to 8 variables, got " + std::to_string(cards.size()));
    }
    if (table_size(cards) != pmf.size()) {
        throw ContractError("distribution: table has " + std::to_string(pmf.size()) + " entries, alphabets imply " +
                            std::to_string(table_size(cards)));
    }
    double total = 0.0;
    for (double v : pmf) {
        if (!(v >= 0.0)) {
            throw ContractError("distribution: negative or NaN probability");
        }
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-12) {
        throw ContractError("distribution: total mass " + std::to_string(total) + " differs from 1");
    }
}

std::size_t JointDistribution::index(std::span<const std::size_t> config) const {
    std::size_t flat = 0;
    for (std::size_t i = 0; i < cards.size(); ++i) {
        flat = flat * cards[i] + config[i];
    }
    return flat;
}

void JointDistribution::decode(std::size_t flat, std::span<std::size_t> config) const {
    for (std::size_t i = cards.size(); i-- > 0;) {
        config[i] = flat % cards[i];
        flat /= cards[i];
    }
}

JointDistribution JointDistribution::product(const std::vector<std::vector<double>>& marginals) {
    JointDistribution p;
    for (const auto& m : marginals) {
        p.cards.push_back(m.size());
    }
    p.pmf.assign(table_size(p.cards), 1.0);
    std::vector<std::size_t> config(p.cards.size());
    for (std::size_t flat = 0; flat < p.pmf.size(); ++flat) {
        p.decode(flat, config);
        for (std::size_t i = 0; i < config.size(); ++i) {
            p.pmf[flat] *= marginals[i][config[i]];
        }
    }
    return p;
}

Divergence kl_divergence(const JointDistribution& p, const JointDistribution& q) {
    if (p.cards != q.cards || p.pmf.size() != q.pmf.size()) {
        throw DimensionError("kl_divergence: distributions over different tables");
    }
    Divergence d;
    for (std::size_t i = 0; i < p.pmf.size(); ++i) {
        const double pi = p.pmf[i];
        if (pi == 0.0) {
            continue;
        }
        if (q.pmf[i] == 0.0) {
            d.infinite = true;
            d.nats = std::numeric_limits<double>::infinity();
            return d;
        }
        d.nats += pi * std::log(pi / q.pmf[i]);
    }
    return d;
}

double entropy(const JointDistribution& p) { return plogp_sum(p.pmf); }

JointDistribution marginal(const JointDistribution& p, std::span<const std::size_t> vars) {
    JointDistribution out;
    for (auto v : vars) {
        if (v >= p.n_vars()) {
            throw ContractError("marginal: variable " + std::to_string(v) + " out of range");
        }
        out.cards.push_back(p.cards[v]);
    }
    out.pmf.assign(table_size(out.cards), 0.0);
    std::vector<std::size_t> config(p.n_vars());
    for (std::size_t flat = 0; flat < p.pmf.size(); ++flat) {
        if (p.pmf[flat] == 0.0) {
            continue;
        }
        p.decode(flat, config);
        std::size_t idx = 0;
        for (std::size_t i = 0; i < vars.size(); ++i) {
            idx = idx * out.cards[i] + config[vars[i]];
        }
        out.pmf[idx] += p.pmf[flat];
    }
    return out;
}

JointDistribution product_of_marginals(const JointDistribution& p) {
    std::vector<std::vector<double>> marginals;
    for (std::size_t v = 0; v < p.n_vars(); ++v) {
        std::size_t var = v;
        marginals.push_back(marginal(p, std::span<const std::size_t>(&var, 1)).pmf);
    }
    return JointDistribution::product(marginals);
}

double multiinformation(const JointDistribution& p) { return kl_divergence(p, product_of_marginals(p)).nats; }

double multiinformation_from_entropies(const JointDistribution& p) {
    double sum_h = 0.0;
    for (std::size_t v = 0; v < p.n_vars(); ++v) {
        std::size_t var = v;
        sum_h += entropy(marginal(p, std::span<const std::size_t>(&var, 1)));
    }
    return sum_h - entropy(p);
}

double block_multiinformation(const JointDistribution& p, const std::vector<std::vector<std::size_t>>& blocks) {
    // Each block becomes one variable whose alphabet is the block's configurations.
    GroupingMap g;
    for (const auto& block : blocks) {
        std::size_t size = 1;
        for (auto v : block) {
            size *= p.cards.at(v);
        }
        std::vector<std::size_t> table(size);
        std::iota(table.begin(), table.end(), 0);
        g.subsets.push_back(block);
        g.tables.push_back(std::move(table));
        g.out_cards.push_back(size);
    }
    return multiinformation(apply_grouping(p, g));
}

double mutual_information(const JointDistribution& p, std::span<const std::size_t> a, std::span<const std::size_t> b) {
    std::vector<std::size_t> ab(a.begin(), a.end());
    ab.insert(ab.end(), b.begin(), b.end());
    return entropy(marginal(p, a)) + entropy(marginal(p, b)) - entropy(marginal(p, ab));
}

void GroupingMap::validate(const std::vector<std::size_t>& cards) const {
    if (subsets.empty() || tables.size() != subsets.size() || out_cards.size() != subsets.size()) {
        throw ContractError("grouping: subsets, tables and alphabets must have equal nonzero length");
    }
    std::vector<int> seen(cards.size(), 0);
    for (std::size_t j = 0; j < subsets.size(); ++j) {
        if (subsets[j].empty()) {
            throw ContractError("grouping: empty subset");
        }
        std::size_t domain = 1;
        for (auto v : subsets[j]) {
            if (v >= cards.size()) {
                throw ContractError("grouping: variable " + std::to_string(v) + " out of range");
            }
            ++seen[v];
            domain *= cards[v];
        }
        if (tables[j].size() != domain) {
            throw ContractError("grouping: f_" + std::to_string(j) + " is not total on its domain");
        }
        if (out_cards[j] == 0) {
            throw ContractError("grouping: empty output alphabet");
        }
        for (auto value : tables[j]) {
            if (value >= out_cards[j]) {
                throw ContractError("grouping: f_" + std::to_string(j) + " maps outside its alphabet");
            }
        }
    }
    for (auto s : seen) {
        if (s != 1) {
            throw ContractError("grouping: subsets do not partition the variables");
        }
    }
}

GroupingMap GroupingMap::identity(const std::vector<std::size_t>& cards) {
    GroupingMap g;
    for (std::size_t v = 0; v < cards.size(); ++v) {
        std::vector<std::size_t> table(cards[v]);
        std::iota(table.begin(), table.end(), 0);
        g.subsets.push_back({v});
        g.tables.push_back(std::move(table));
        g.out_cards.push_back(cards[v]);
    }
    return g;
}

JointDistribution apply_grouping(const JointDistribution& p, const GroupingMap& g) {
    g.validate(p.cards);
    JointDistribution out;
    out.cards = g.out_cards;
    out.pmf.assign(table_size(out.cards), 0.0);
    std::vector<std::size_t> config(p.n_vars());
    for (std::size_t flat = 0; flat < p.pmf.size(); ++flat) {
        if (p.pmf[flat] == 0.0) {
            continue;
        }
        p.decode(flat, config);
        std::size_t target = 0;
        for (std::size_t j = 0; j < g.subsets.size(); ++j) {
            std::size_t local = 0;
            for (auto v : g.subsets[j]) {
                local = local * p.cards[v] + config[v];
            }
            target = target * g.out_cards[j] + g.tables[j][local];
        }
        out.pmf[target] += p.pmf[flat];
    }
    return out;
}

JointDistribution random_distribution(const std::vector<std::size_t>& cards, Rng& rng) {
    JointDistribution p;
    p.cards = cards;
    p.pmf.resize(table_size(cards));
    std::gamma_distribution<double> gamma(1.0, 1.0);
    double total = 0.0;
    for (auto& v : p.pmf) {
        v = gamma(rng);
        total += v;
    }
    for (auto& v : p.pmf) {
        v /= total;
    }
    return p;
}

GroupingMap random_grouping(const std::vector<std::size_t>& cards, std::size_t min_groups, std::size_t max_groups,
                            Rng& rng) {
    const std::size_t n = cards.size();
    if (min_groups == 0 || min_groups > max_groups || max_groups > n) {
        throw ContractError("random_grouping: invalid group count range");
    }
    const std::size_t m = min_groups + uniform_index(rng, max_groups - min_groups + 1);
    // Shuffle variables, cut into m nonempty runs at random distinct cut points.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> cuts(n - 1);
    std::iota(cuts.begin(), cuts.end(), 1);
    std::shuffle(cuts.begin(), cuts.end(), rng);
    cuts.resize(m - 1);
    std::sort(cuts.begin(), cuts.end());
    cuts.push_back(n);

    GroupingMap g;
    std::size_t start = 0;
    for (auto end : cuts) {
        std::vector<std::size_t> subset(order.begin() + static_cast<std::ptrdiff_t>(start),
                                        order.begin() + static_cast<std::ptrdiff_t>(end));
        std::sort(subset.begin(), subset.end());
        std::size_t domain = 1;
        for (auto v : subset) {
            domain *= cards[v];
        }
        const std::size_t alphabet = 1 + uniform_index(rng, domain);
        std::vector<std::size_t> table(domain);
        for (auto& t : table) {
            t = uniform_index(rng, alphabet);
        }
        g.subsets.push_back(std::move(subset));
        g.tables.push_back(std::move(table));
        g.out_cards.push_back(alphabet);
        start = end;
    }
    return g;
}

std::string to_json(const JointDistribution& p) {
    nlohmann::json j;
    j["cards"] = p.cards;
    j["pmf"] = p.pmf;
    return j.dump();
}

std::string to_json(const GroupingMap& g) {
    nlohmann::json j;
    j["subsets"] = g.subsets;
    j["tables"] = g.tables;
    j["out_cards"] = g.out_cards;
    return j.dump();
}

Lemma1Trial lemma1_trial(const JointDistribution& p, const GroupingMap& g, const Lemma1Options& options) {
    p.validate();
    Lemma1Trial t;
    t.cards = p.cards;
    t.groups = g.groups();
    t.info_x = multiinformation(p);
    t.info_g = multiinformation(apply_grouping(p, g));
    t.margin = t.info_x - t.info_g;
    for (const auto& subset : g.subsets) {
        if (subset.size() > 1) {
            t.within_group += multiinformation(marginal(p, subset));
        }
    }
    t.inter_group = t.info_x - t.within_group;
    t.dependent = t.inter_group > options.dependence_threshold;
    t.strict = t.margin > options.strict_threshold;
    t.violation = t.info_g > t.info_x + options.tolerance;
    return t;
}

Lemma1Report verify_lemma1(std::size_t trials, std::uint64_t seed, const Lemma1Options& options) {
    if (trials == 0) {
        throw ContractError("verify_lemma1: need at least one trial");
    }
    if (options.min_vars < 2 || options.min_vars > options.max_vars || options.max_card < 2) {
        throw ContractError("verify_lemma1: invalid variable range");
    }
    Lemma1Report report;
    report.trials = trials;
    report.records.resize(trials);
    std::vector<std::string> dumps(trials);
    parallel_for(trials, [&](std::size_t i) {
        const std::uint64_t trial_seed = derive_seed(seed, {i});
        Rng rng(trial_seed);
        const std::size_t n = options.min_vars + uniform_index(rng, options.max_vars - options.min_vars + 1);
        std::vector<std::size_t> cards(n);
        for (auto& c : cards) {
            c = 2 + uniform_index(rng, options.max_card - 1);
        }
        JointDistribution p = random_distribution(cards, rng);
        GroupingMap g = random_grouping(cards, 1, n - 1, rng);
        Lemma1Trial t = lemma1_trial(p, g, options);
        t.seed = trial_seed;
        if (t.violation) {
            dumps[i] = "{\"distribution\":" + to_json(p) + ",\"grouping\":" + to_json(g) + "}";
        }
        report.records[i] = std::move(t);
    });
    report.min_margin = std::numeric_limits<double>::infinity();
    report.min_margin_dependent = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < trials; ++i) {
        const auto& t = report.records[i];
        report.min_margin = std::min(report.min_margin, t.margin);
        if (t.violation) {
            ++report.violations;
            report.violation_dumps.push_back(dumps[i]);
        }
        if (t.dependent) {
            ++report.dependent;
            report.min_margin_dependent = std::min(report.min_margin_dependent, t.margin);
            if (t.strict) {
                ++report.strict_among_dependent;
            }
        }
    }
    return report;
}

std::vector<std::size_t> LatentModel::latent_indices() const {
    std::vector<std::size_t> out(latent_vars);
    std::iota(out.begin(), out.end(), 0);
    return out;
}

std::vector<std::size_t> LatentModel::observed_indices() const {
    std::vector<std::size_t> out(joint.n_vars() - latent_vars);
    std::iota(out.begin(), out.end(), latent_vars);
    return out;
}

std::vector<std::size_t> LatentModel::observed_cards() const {
    return {joint.cards.begin() + static_cast<std::ptrdiff_t>(latent_vars), joint.cards.end()};
}

std::string to_string(Claim2Status s) {
    switch (s) {
        case Claim2Status::sufficient:
            return "sufficient";
        case Claim2Status::strict_dpi:
            return "strict_dpi";
        case Claim2Status::dpi_violated:
            return "dpi_violated";
    }
    return "unknown";
}

Theorem1Result verify_theorem1(const LatentModel& model, const GroupingMap& g, double tolerance) {
    model.joint.validate();
    if (model.latent_vars == 0 || model.latent_vars >= model.joint.n_vars()) {
        throw ContractError("verify_theorem1: need at least one latent and one observed variable");
    }
    const auto z = model.latent_indices();
    const auto x = model.observed_indices();
    g.validate(model.observed_cards());

    // Extend the grouping with the identity on Z so (Z, G) comes out of one pushforward.
    GroupingMap extended;
    for (auto v : z) {
        std::vector<std::size_t> table(model.joint.cards[v]);
        std::iota(table.begin(), table.end(), 0);
        extended.subsets.push_back({v});
        extended.tables.push_back(std::move(table));
        extended.out_cards.push_back(model.joint.cards[v]);
    }
    for (std::size_t j = 0; j < g.groups(); ++j) {
        std::vector<std::size_t> shifted;
        for (auto v : g.subsets[j]) {
            shifted.push_back(v + model.latent_vars);
        }
        extended.subsets.push_back(std::move(shifted));
        extended.tables.push_back(g.tables[j]);
        extended.out_cards.push_back(g.out_cards[j]);
    }
    const JointDistribution zg = apply_grouping(model.joint, extended);
    std::vector<std::size_t> g_vars(g.groups());
    std::iota(g_vars.begin(), g_vars.end(), model.latent_vars);

    Theorem1Result r;
    const JointDistribution px = marginal(model.joint, x);
    r.info_x = multiinformation(px);
    r.info_g = multiinformation(marginal(zg, g_vars));
    r.mi_zx = mutual_information(model.joint, z, x);
    r.mi_zg = mutual_information(zg, z, g_vars);
    double within = 0.0;
    for (const auto& subset : g.subsets) {
        if (subset.size() > 1) {
            within += multiinformation(marginal(px, subset));
        }
    }
    r.inter_group = r.info_x - within;
    r.claim1_holds = r.info_g <= r.info_x + tolerance;
    r.claim1_strict = r.info_x - r.info_g > 1e-12;
    const double diff = r.mi_zg - r.mi_zx;
    if (diff > tolerance) {
        r.claim2 = Claim2Status::dpi_violated;
    } else if (diff >= -tolerance) {
        r.claim2 = Claim2Status::sufficient;
    } else {
        r.claim2 = Claim2Status::strict_dpi;
    }
    return r;
}

namespace {

// Joint over (Z, X1, X2) = p(z) p(x1 | z) p(x2); X2 carries no information about Z.
LatentModel informative_plus_noise(std::size_t z_card, std::size_t x1_card, std::size_t x2_card, Rng& rng) {
    auto pz = random_distribution({z_card}, rng).pmf;
    auto px2 = random_distribution({x2_card}, rng).pmf;
    LatentModel m;
    m.latent_vars = 1;
    m.joint.cards = {z_card, x1_card, x2_card};
    m.joint.pmf.assign(z_card * x1_card * x2_card, 0.0);
    for (std::size_t zi = 0; zi < z_card; ++zi) {
        auto cond = random_distribution({x1_card}, rng).pmf;
        for (std::size_t a = 0; a < x1_card; ++a) {
            for (std::size_t b = 0; b < x2_card; ++b) {
                m.joint.pmf[(zi * x1_card + a) * x2_card + b] = pz[zi] * cond[a] * px2[b];
            }
        }
    }
    return m;
}

std::vector<std::size_t> random_bijection(std::size_t n, Rng& rng) {
    std::vector<std::size_t> t(n);
    std::iota(t.begin(), t.end(), 0);
    std::shuffle(t.begin(), t.end(), rng);
    return t;
}

}  // namespace

LatentModel copy_plus_noise_model(double noise_bias) {
    LatentModel m;
    m.latent_vars = 1;
    m.joint.cards = {2, 2, 2};
    m.joint.pmf.assign(8, 0.0);
    for (std::size_t zi = 0; zi < 2; ++zi) {
        m.joint.pmf[(zi * 2 + zi) * 2 + 0] = 0.5 * (1.0 - noise_bias);
        m.joint.pmf[(zi * 2 + zi) * 2 + 1] = 0.5 * noise_bias;
    }
    return m;
}

Theorem1Report audit_theorem1(std::size_t trials, std::uint64_t seed, std::size_t constructed) {
    Theorem1Report report;
    report.trials = trials;
    report.records.resize(trials);
    parallel_for(trials, [&](std::size_t i) {
        Rng rng(derive_seed(seed, {i}));
        const std::size_t k = 1 + uniform_index(rng, 2);
        const std::size_t n = 2 + uniform_index(rng, k == 1 ? 3 : 2);
        std::vector<std::size_t> cards(k + n);
        for (auto& c : cards) {
            c = 2 + uniform_index(rng, 2);
        }
        LatentModel model{random_distribution(cards, rng), k};
        GroupingMap g = random_grouping(model.observed_cards(), 1, n, rng);
        report.records[i] = verify_theorem1(model, g);
    });
    report.max_dpi_excess = -std::numeric_limits<double>::infinity();
    for (const auto& r : report.records) {
        report.max_dpi_excess = std::max(report.max_dpi_excess, r.mi_zg - r.mi_zx);
        switch (r.claim2) {
            case Claim2Status::sufficient:
                ++report.sufficient;
                break;
            case Claim2Status::strict_dpi:
                ++report.strict_dpi;
                break;
            case Claim2Status::dpi_violated:
                ++report.dpi_violations;
                break;
        }
        if (!r.claim1_holds) {
            ++report.claim1_violations;
        }
    }

    // Constructed cases.
    const auto noisy = copy_plus_noise_model(0.3);
    report.sufficient_cases.push_back(
        {"copy_plus_noise: keep X1, collapse X2",
         verify_theorem1(noisy, GroupingMap{{{0}, {1}}, {{0, 1}, {0, 0}}, {2, 1}})});
    report.counterexamples.push_back(
        {"copy_plus_noise: collapse X1, keep X2",
         verify_theorem1(noisy, GroupingMap{{{0}, {1}}, {{0, 0}, {0, 1}}, {1, 2}})});
    Rng rng(derive_seed(seed, {0xC0175ULL}));
    for (std::size_t c = 0; c < constructed; ++c) {
        const std::size_t z_card = 2 + uniform_index(rng, 2);
        const std::size_t a = 2 + uniform_index(rng, 2);
        const std::size_t b = 2 + uniform_index(rng, 2);
        LatentModel model = informative_plus_noise(z_card, a, b, rng);

        // Identity on everything, or a bijection of X1 with X2 collapsed: both sufficient.
        report.sufficient_cases.push_back(
            {"identity grouping", verify_theorem1(model, GroupingMap::identity(model.observed_cards()))});
        std::vector<std::size_t> collapse_noise(b, 0);
        report.sufficient_cases.push_back(
            {"bijection of informative coordinate, noise collapsed",
             verify_theorem1(model, GroupingMap{{{0}, {1}}, {random_bijection(a, rng), collapse_noise}, {a, 1}})});

        // Collapsing the informative coordinate destroys all information about Z.
        std::vector<std::size_t> collapse_signal(a, 0);
        std::vector<std::size_t> keep_noise(b);
        std::iota(keep_noise.begin(), keep_noise.end(), 0);
        report.counterexamples.push_back(
            {"informative coordinate collapsed",
             verify_theorem1(model, GroupingMap{{{0}, {1}}, {collapse_signal, keep_noise}, {1, b}})});
    }
    return report;
}

}  // namespace sjepa::info
