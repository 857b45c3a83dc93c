#include "tiltsens/artifact.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "tiltsens/errors.hpp"

namespace tiltsens {

using nlohmann::json;

namespace {

json propensity_to_json(const PropensityFit& pf) {
    json j;
    j["intercept"] = pf.intercept();
    j["epsilon"] = pf.epsilon();
    j["train_clip_rate"] = pf.train_clip_rate();
    j["dim"] = pf.dim();
    j["terms"] = json::array();
    for (const auto& t : pf.terms()) {
        json jt;
        jt["spline"] = t.spline;
        jt["covariate"] = t.covariate;
        jt["knots"] = t.knots;
        jt["centers"] = t.centers;
        jt["coef"] = t.coef;
        jt["lambda"] = t.lambda;
        jt["xmin"] = t.xmin;
        jt["xmax"] = t.xmax;
        j["terms"].push_back(std::move(jt));
    }
    return j;
}

PropensityFit propensity_from_json(const json& j) {
    std::vector<PropensityFit::Term> terms;
    for (const auto& jt : j.at("terms")) {
        PropensityFit::Term t;
        t.spline = jt.at("spline").get<bool>();
        t.covariate = jt.at("covariate").get<std::size_t>();
        t.knots = jt.at("knots").get<std::vector<double>>();
        t.centers = jt.at("centers").get<std::vector<double>>();
        t.coef = jt.at("coef").get<std::vector<double>>();
        t.lambda = jt.at("lambda").get<double>();
        t.xmin = jt.at("xmin").get<double>();
        t.xmax = jt.at("xmax").get<double>();
        terms.push_back(std::move(t));
    }
    return PropensityFit(j.at("intercept").get<double>(), std::move(terms),
                         j.at("epsilon").get<double>(), j.at("train_clip_rate").get<double>(),
                         j.at("dim").get<std::size_t>());
}

json outcome_to_json(const OutcomeFit& f) {
    json j;
    j["arm"] = f.arm();
    j["beta"] = f.beta();
    j["h_stage1"] = f.h_stage1();
    j["h_stage2"] = f.h_stage2();
    j["index"] = f.train_index();
    j["y"] = f.train_y();
    return j;
}

OutcomeFit outcome_from_json(const json& j) {
    return OutcomeFit(j.at("arm").get<int>(), j.at("beta").get<std::vector<double>>(),
                      j.at("h_stage1").get<double>(), j.at("h_stage2").get<double>(),
                      j.at("index").get<std::vector<double>>(),
                      j.at("y").get<std::vector<double>>());
}

json dataset_to_json(const Dataset& ds) {
    json j;
    j["covariate_names"] = ds.covariate_names();
    j["n"] = ds.n();
    std::vector<double> x;
    x.reserve(ds.n() * ds.p());
    std::vector<int> t(ds.n());
    std::vector<double> y(ds.n());
    for (std::size_t i = 0; i < ds.n(); ++i) {
        auto xi = ds.x(i);
        x.insert(x.end(), xi.begin(), xi.end());
        t[i] = ds.t(i);
        y[i] = ds.y(i);
    }
    j["x"] = x;
    j["t"] = t;
    j["y"] = y;
    return j;
}

Dataset dataset_from_json(const json& j) {
    auto names = j.at("covariate_names").get<std::vector<std::string>>();
    auto x = j.at("x").get<std::vector<double>>();
    auto t = j.at("t").get<std::vector<int>>();
    auto y = j.at("y").get<std::vector<double>>();
    std::size_t n = j.at("n").get<std::size_t>();
    std::size_t p = names.size();
    if (x.size() != n * p || t.size() != n || y.size() != n)
        throw ConfigError("artifact: inconsistent dataset block");
    std::vector<ObservationRecord> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        rows[i].x.assign(x.begin() + static_cast<std::ptrdiff_t>(i * p),
                         x.begin() + static_cast<std::ptrdiff_t>((i + 1) * p));
        rows[i].t = t[i];
        rows[i].y = y[i];
    }
    return Dataset(names, rows);
}

} // namespace

void save_artifact(const FitArtifact& artifact, const std::string& path) {
    if (!artifact.bundle || !artifact.data)
        throw ConfigError("save_artifact: bundle and data must be set");
    json j;
    j["format_version"] = kArtifactFormatVersion;
    j["kind"] = "tiltsens_fit";
    j["propensity"] = propensity_to_json(artifact.bundle->propensity());
    j["outcome0"] = outcome_to_json(artifact.bundle->outcome(0));
    j["outcome1"] = outcome_to_json(artifact.bundle->outcome(1));
    j["data"] = dataset_to_json(*artifact.data);
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << j.dump(1, '\t') << "\n";
}

FitArtifact load_artifact(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open artifact: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("artifact parse error: " + std::string(e.what()));
    }
    if (j.value("format_version", -1) != kArtifactFormatVersion)
        throw ConfigError("artifact: unsupported format_version");
    if (j.value("kind", "") != "tiltsens_fit")
        throw ConfigError("artifact: not a tiltsens fit artifact");
    FitArtifact artifact;
    artifact.bundle = std::make_shared<NuisanceBundle>(propensity_from_json(j.at("propensity")),
                                                       outcome_from_json(j.at("outcome0")),
                                                       outcome_from_json(j.at("outcome1")));
    artifact.data = std::make_shared<Dataset>(dataset_from_json(j.at("data")));
    return artifact;
}

} // namespace tiltsens
