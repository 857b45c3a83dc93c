#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tiltsens {

struct ObservationRecord {
    std::vector<double> x;
    int t = 0;
    double y = 0.0;
};

// Immutable after construction; safe for concurrent reads.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<std::string> covariate_names, const std::vector<ObservationRecord>& rows);

    std::size_t n() const { return n_; }
    std::size_t p() const { return p_; }
    std::span<const double> x(std::size_t i) const { return {xs_.data() + i * p_, p_}; }
    int t(std::size_t i) const { return t_[i]; }
    double y(std::size_t i) const { return y_[i]; }
    ObservationRecord record(std::size_t i) const;

    const std::vector<std::string>& covariate_names() const { return names_; }
    std::size_t covariate_index(const std::string& name) const;

    std::vector<std::size_t> arm_indices(int t) const;
    std::size_t arm_count(int t) const;
    double treated_fraction() const;
    double arm_mean_y(int t) const;

    Dataset subset(std::span<const std::size_t> idx) const;

private:
    std::vector<std::string> names_;
    std::vector<double> xs_;      // row-major n*p
    std::vector<std::int8_t> t_;
    std::vector<double> y_;
    std::size_t n_ = 0;
    std::size_t p_ = 0;
};

struct SplitPlan {
    int K = 0;
    std::vector<int> assignment; // per-row fold index in 1..K
    std::uint64_t seed = 0;

    std::vector<std::size_t> fold_rows(int k) const;
    std::vector<std::size_t> complement_rows(int k) const;
};

enum class ColumnRole { covariate, treatment, outcome, ignore };
enum class CovariateKind { numeric, categorical };

struct ColumnSpec {
    ColumnRole role = ColumnRole::ignore;
    CovariateKind kind = CovariateKind::numeric;
};

struct CsvSchema {
    std::map<std::string, ColumnSpec> columns;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema);
void write_csv(const Dataset& ds, const std::string& path);

SplitPlan make_folds(const Dataset& ds, int K, std::uint64_t seed);

struct SummaryRow {
    std::string covariate;
    bool indicator = false;
    double mean[2] = {0, 0}; // by arm t=0,1
    double iqr[2] = {0, 0};
    double pct[2] = {0, 0};  // indicators only
};

struct SummaryTable {
    std::size_t n_arm[2] = {0, 0};
    std::vector<SummaryRow> rows;
};

SummaryTable empirical_summary(const Dataset& ds);
void write_summary_csv(const SummaryTable& tbl, const std::string& path);

} // namespace tiltsens
