#pragma once

#include <memory>
#include <string>

#include "tiltsens/estimator.hpp"

namespace tiltsens {

struct FitArtifact {
    std::shared_ptr<const NuisanceBundle> bundle;
    std::shared_ptr<const Dataset> data; // training sample (covariate law + arms)
};

inline constexpr int kArtifactFormatVersion = 1;

void save_artifact(const FitArtifact& artifact, const std::string& path);
FitArtifact load_artifact(const std::string& path);

} // namespace tiltsens
