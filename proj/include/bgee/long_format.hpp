#pragma once

#include "bgee/model.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bgee {

/// Bad input data; `line()` is the 1-based CSV line when one applies.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

struct LongFormatOptions {
    int freq_levels = 0;  // 0: take the largest frequency seen
    Link link = Link::identity;
    std::vector<std::string> covariates;     // empty: every column after y
    std::vector<std::string> interact;       // receive frequency interactions
    std::vector<std::string> ear_covariates; // allowed to differ between rows
};

struct LongFormatData {
    MeanModelSpec model;
    std::vector<ClusterData> clusters;
    int n_rows = 0;
};

/// Reads `participant_id, ear, freq, y, <covariates...>` rows (header
/// required, columns matched by name). Every participant must supply all
/// 2Q (ear, frequency) cells, and covariates not declared ear-level must be
/// constant within a participant.
LongFormatData read_long_format(std::istream& in, const LongFormatOptions& options);
LongFormatData read_long_format(const std::filesystem::path& path,
                                const LongFormatOptions& options);

/// Writes clusters back out; `columns` maps each covariate name to the
/// design column holding its raw value.
void write_long_format(std::ostream& out, std::span<const ClusterData> clusters,
                       const std::vector<std::pair<std::string, int>>& columns);

}  // namespace bgee
