#include "tiltsens/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "tiltsens/csv.hpp"
#include "tiltsens/errors.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/stats.hpp"

namespace tiltsens {

Dataset::Dataset(std::vector<std::string> covariate_names,
                 const std::vector<ObservationRecord>& rows)
    : names_(std::move(covariate_names)) {
    if (rows.empty()) throw ValidationError("dataset must contain at least one row");
    p_ = names_.size();
    if (p_ == 0) throw ValidationError("dataset must have at least one covariate");
    n_ = rows.size();
    xs_.reserve(n_ * p_);
    t_.reserve(n_);
    y_.reserve(n_);
    for (std::size_t i = 0; i < n_; ++i) {
        const auto& r = rows[i];
        if (r.x.size() != p_)
            throw ValidationError("row " + std::to_string(i) + ": covariate dimension " +
                                  std::to_string(r.x.size()) + " != " + std::to_string(p_));
        if (r.t != 0 && r.t != 1)
            throw ValidationError("row " + std::to_string(i) + ": treatment must be 0 or 1, got " +
                                  std::to_string(r.t));
        if (!std::isfinite(r.y))
            throw ValidationError("row " + std::to_string(i) + ": non-finite outcome");
        for (double v : r.x)
            if (!std::isfinite(v))
                throw ValidationError("row " + std::to_string(i) + ": non-finite covariate");
        xs_.insert(xs_.end(), r.x.begin(), r.x.end());
        t_.push_back(static_cast<std::int8_t>(r.t));
        y_.push_back(r.y);
    }
}

ObservationRecord Dataset::record(std::size_t i) const {
    ObservationRecord r;
    auto xv = x(i);
    r.x.assign(xv.begin(), xv.end());
    r.t = t(i);
    r.y = y(i);
    return r;
}

std::size_t Dataset::covariate_index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw ConfigError("unknown covariate: " + name);
    return static_cast<std::size_t>(it - names_.begin());
}

std::vector<std::size_t> Dataset::arm_indices(int t) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n_; ++i)
        if (t_[i] == t) idx.push_back(i);
    return idx;
}

std::size_t Dataset::arm_count(int t) const {
    std::size_t c = 0;
    for (auto v : t_) c += (v == t);
    return c;
}

double Dataset::treated_fraction() const {
    return static_cast<double>(arm_count(1)) / static_cast<double>(n_);
}

double Dataset::arm_mean_y(int t) const {
    double s = 0.0;
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_; ++i)
        if (t_[i] == t) {
            s += y_[i];
            ++c;
        }
    if (c == 0) throw ValidationError("arm " + std::to_string(t) + " is empty");
    return s / static_cast<double>(c);
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.names_ = names_;
    out.p_ = p_;
    out.n_ = idx.size();
    if (out.n_ == 0) throw ValidationError("empty subset");
    out.xs_.reserve(out.n_ * p_);
    out.t_.reserve(out.n_);
    out.y_.reserve(out.n_);
    for (std::size_t i : idx) {
        auto xv = x(i);
        out.xs_.insert(out.xs_.end(), xv.begin(), xv.end());
        out.t_.push_back(t_[i]);
        out.y_.push_back(y_[i]);
    }
    return out;
}

std::vector<std::size_t> SplitPlan::fold_rows(int k) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        if (assignment[i] == k) idx.push_back(i);
    return idx;
}

std::vector<std::size_t> SplitPlan::complement_rows(int k) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        if (assignment[i] != k) idx.push_back(i);
    return idx;
}

namespace {

bool is_missing(const std::string& s) {
    std::string t;
    for (char c : s)
        if (c != ' ' && c != '\t' && c != '\r') t.push_back(c);
    return t.empty() || t == "NA" || t == "na" || t == "NaN" || t == "nan" || t == "NULL";
}

} // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    CsvTable tbl = read_csv_file(path);

    // Resolve schema columns against the header.
    std::vector<int> col_of_header(tbl.header.size(), -1);
    std::string treatment_col, outcome_col;
    std::vector<std::size_t> cov_cols;
    std::map<std::string, std::size_t> header_pos;
    for (std::size_t j = 0; j < tbl.header.size(); ++j) header_pos[tbl.header[j]] = j;

    std::size_t t_pos = 0, y_pos = 0;
    int n_treat = 0, n_out = 0;
    for (const auto& [name, spec] : schema.columns) {
        auto it = header_pos.find(name);
        if (it == header_pos.end())
            throw ConfigError("schema column not found in file: " + name);
        switch (spec.role) {
        case ColumnRole::treatment:
            ++n_treat;
            t_pos = it->second;
            treatment_col = name;
            break;
        case ColumnRole::outcome:
            ++n_out;
            y_pos = it->second;
            outcome_col = name;
            break;
        case ColumnRole::covariate:
            cov_cols.push_back(it->second);
            break;
        case ColumnRole::ignore:
            break;
        }
    }
    if (n_treat != 1) throw ConfigError("schema must name exactly one treatment column");
    if (n_out != 1) throw ConfigError("schema must name exactly one outcome column");
    if (cov_cols.empty()) throw ConfigError("schema must name at least one covariate column");
    std::sort(cov_cols.begin(), cov_cols.end()); // stable column order = file order

    // First pass: collect levels of categorical columns. The reference level
    // (lexicographically smallest) is dropped in the expansion.
    std::map<std::size_t, std::vector<std::string>> levels;
    for (std::size_t c : cov_cols) {
        const auto& spec = schema.columns.at(tbl.header[c]);
        if (spec.kind != CovariateKind::categorical) continue;
        std::set<std::string> lv;
        for (const auto& row : tbl.rows) {
            if (c >= row.size() || is_missing(row[c]))
                throw ValidationError("missing value in column " + tbl.header[c]);
            lv.insert(row[c]);
        }
        levels[c] = std::vector<std::string>(lv.begin(), lv.end());
    }

    std::vector<std::string> names;
    for (std::size_t c : cov_cols) {
        const std::string& base = tbl.header[c];
        const auto& spec = schema.columns.at(base);
        if (spec.kind == CovariateKind::categorical) {
            const auto& lv = levels[c];
            for (std::size_t l = 1; l < lv.size(); ++l) names.push_back(base + "=" + lv[l]);
        } else {
            names.push_back(base);
        }
    }
    if (names.empty())
        throw ValidationError("categorical covariates have a single level; no covariates remain");

    std::vector<ObservationRecord> rows;
    rows.reserve(tbl.rows.size());
    for (std::size_t i = 0; i < tbl.rows.size(); ++i) {
        const auto& raw = tbl.rows[i];
        if (raw.size() != tbl.header.size())
            throw ValidationError("row " + std::to_string(i + 1) + ": expected " +
                                  std::to_string(tbl.header.size()) + " fields, got " +
                                  std::to_string(raw.size()));
        ObservationRecord r;
        for (std::size_t c : cov_cols) {
            const std::string& base = tbl.header[c];
            const auto& spec = schema.columns.at(base);
            if (is_missing(raw[c]))
                throw ValidationError("row " + std::to_string(i + 1) + ": missing value in " + base);
            if (spec.kind == CovariateKind::categorical) {
                const auto& lv = levels[c];
                for (std::size_t l = 1; l < lv.size(); ++l)
                    r.x.push_back(raw[c] == lv[l] ? 1.0 : 0.0);
            } else {
                auto v = parse_double(raw[c]);
                if (!v || !std::isfinite(*v))
                    throw ValidationError("row " + std::to_string(i + 1) + ": non-numeric value '" +
                                          raw[c] + "' in " + base);
                r.x.push_back(*v);
            }
        }
        auto tv = parse_double(raw[t_pos]);
        if (!tv || (*tv != 0.0 && *tv != 1.0))
            throw ValidationError("row " + std::to_string(i + 1) + ": treatment column " +
                                  treatment_col + " must be 0 or 1, got '" + raw[t_pos] + "'");
        r.t = static_cast<int>(*tv);
        auto yv = parse_double(raw[y_pos]);
        if (!yv || !std::isfinite(*yv))
            throw ValidationError("row " + std::to_string(i + 1) + ": non-numeric outcome '" +
                                  raw[y_pos] + "' in " + outcome_col);
        r.y = *yv;
        rows.push_back(std::move(r));
    }
    return Dataset(names, rows);
}

void write_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    for (const auto& nm : ds.covariate_names()) out << nm << ",";
    out << "treatment,outcome\n";
    for (std::size_t i = 0; i < ds.n(); ++i) {
        for (double v : ds.x(i)) out << format_double(v) << ",";
        out << ds.t(i) << "," << format_double(ds.y(i)) << "\n";
    }
}

SplitPlan make_folds(const Dataset& ds, int K, std::uint64_t seed) {
    if (K < 2 || static_cast<std::size_t>(K) > ds.n())
        throw ValidationError("fold count K must satisfy 2 <= K <= n");
    auto treated = ds.arm_indices(1);
    auto control = ds.arm_indices(0);
    if (treated.size() < static_cast<std::size_t>(K) ||
        control.size() < static_cast<std::size_t>(K))
        throw ValidationError("infeasible split: an arm has fewer than K=" + std::to_string(K) +
                              " observations");

    auto eng = make_engine(derive_seed(seed, static_cast<std::uint64_t>(K)));
    std::shuffle(treated.begin(), treated.end(), eng);
    std::shuffle(control.begin(), control.end(), eng);

    SplitPlan plan;
    plan.K = K;
    plan.seed = seed;
    plan.assignment.assign(ds.n(), 0);
    // Treated dealt round-robin from fold 1 up, control from fold K down, so
    // total fold sizes differ by at most one.
    for (std::size_t i = 0; i < treated.size(); ++i)
        plan.assignment[treated[i]] = static_cast<int>(i % K) + 1;
    for (std::size_t i = 0; i < control.size(); ++i)
        plan.assignment[control[i]] = K - static_cast<int>(i % K);
    return plan;
}

SummaryTable empirical_summary(const Dataset& ds) {
    SummaryTable tbl;
    tbl.n_arm[0] = ds.arm_count(0);
    tbl.n_arm[1] = ds.arm_count(1);
    for (std::size_t j = 0; j < ds.p(); ++j) {
        SummaryRow row;
        row.covariate = ds.covariate_names()[j];
        bool indicator = true;
        for (std::size_t i = 0; i < ds.n(); ++i) {
            double v = ds.x(i)[j];
            if (v != 0.0 && v != 1.0) {
                indicator = false;
                break;
            }
        }
        row.indicator = indicator;
        for (int arm = 0; arm < 2; ++arm) {
            std::vector<double> vals;
            for (std::size_t i = 0; i < ds.n(); ++i)
                if (ds.t(i) == arm) vals.push_back(ds.x(i)[j]);
            if (vals.empty()) continue;
            row.mean[arm] = mean(vals);
            std::sort(vals.begin(), vals.end());
            row.iqr[arm] =
                quantile_type7_sorted(vals, 0.75) - quantile_type7_sorted(vals, 0.25);
            row.pct[arm] = 100.0 * row.mean[arm];
        }
        tbl.rows.push_back(std::move(row));
    }
    return tbl;
}

void write_summary_csv(const SummaryTable& tbl, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << "covariate,kind,n_t1,n_t0,mean_t1,mean_t0,iqr_t1,iqr_t0,pct_t1,pct_t0\n";
    for (const auto& r : tbl.rows) {
        out << r.covariate << "," << (r.indicator ? "indicator" : "numeric") << ","
            << tbl.n_arm[1] << "," << tbl.n_arm[0] << "," << format_double(r.mean[1]) << ","
            << format_double(r.mean[0]) << "," << format_double(r.iqr[1]) << ","
            << format_double(r.iqr[0]) << ",";
        if (r.indicator)
            out << format_double(r.pct[1]) << "," << format_double(r.pct[0]);
        else
            out << ",";
        out << "\n";
    }
}

} // namespace tiltsens
