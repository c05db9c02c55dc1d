#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "transferbench/dataset.hpp"

namespace transferbench {

/// A family of synthetic "candidate models" over one shared label vector.
/// Candidate i places the C class means on a simplex scaled by
/// separability[i] (so every class pair is equally far apart) and adds unit
/// isotropic Gaussian noise; larger separability means an easier task.
struct SyntheticSpec {
    int num_candidates = 2;
    int samples_per_class = 100;
    int classes = 2;
    int dims = 8;
    /// Strictly increasing, all positive.
    std::vector<double> separability;
    std::uint64_t seed = 0;

    void validate() const;
    static SyntheticSpec load(const std::filesystem::path& path);
};

struct SyntheticFamily {
    std::vector<std::string> candidate_names;
    std::vector<std::filesystem::path> candidate_files;  // FMAT1
    std::filesystem::path labels_file;
    std::filesystem::path truth_file;  // TruePerformanceTable JSON
    /// Probe accuracy per candidate in [0, 1] (mean over 5 probe seeds);
    /// the truth file stores these scaled to [0, 100].
    std::vector<double> oracle_accuracies;
    std::string task_name;
};

/// Held-out accuracy of a linear probe: stratified 70/30 split, logistic
/// head (l2 = 1) on the 70%, accuracy on the 30%.
double oracle_probe(const Dataset& ds, std::uint64_t seed);

/// Generates the candidate feature files, the shared labels and a truth
/// table of probe accuracies under out_dir. Deterministic given the spec.
SyntheticFamily generate_family(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

/// In-memory variant used by tests; candidate i's dataset plus the shared labels.
Dataset make_candidate_dataset(const SyntheticSpec& spec, int candidate_index);

}  // namespace transferbench
