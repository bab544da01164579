#include "bgee/long_format.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace bgee {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    std::string out(s.substr(first, last - first + 1));
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
            current += c;
        } else if (c == ',' && !quoted) {
            fields.push_back(trim(current));
            current.clear();
        } else {
            current += c;
        }
    }
    fields.push_back(trim(current));
    return fields;
}

double parse_number(const std::string& text, const std::string& column, int line) {
    double value = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    if (!text.empty() && *begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (text.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
        throw InputError("column '" + column + "': cannot parse '" + text + "' as a number", line);
    }
    return value;
}

int parse_integer(const std::string& text, const std::string& column, int line) {
    const double v = parse_number(text, column, line);
    if (v != std::floor(v) || std::abs(v) > std::numeric_limits<int>::max()) {
        throw InputError("column '" + column + "': expected an integer, got '" + text + "'", line);
    }
    return static_cast<int>(v);
}

struct Row {
    int line;
    int ear;
    int freq;
    double y;
    std::vector<double> covariates;
};

}  // namespace

LongFormatData read_long_format(std::istream& in, const LongFormatOptions& options) {
    std::string line;
    int line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (trim(line).empty()) continue;
        header = split_fields(line);
        break;
    }
    if (header.empty()) throw InputError("data file is empty");

    std::map<std::string, std::size_t> index;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (!index.emplace(header[c], c).second) {
            throw InputError("duplicate column '" + header[c] + "'", line_no);
        }
    }
    for (const char* required : {"participant_id", "ear", "freq", "y"}) {
        if (!index.contains(required)) {
            throw InputError(std::string("missing required column '") + required + "'", line_no);
        }
    }

    std::vector<std::string> covariates = options.covariates;
    if (covariates.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            const std::string& name = header[c];
            if (name != "participant_id" && name != "ear" && name != "freq" && name != "y") {
                covariates.push_back(name);
            }
        }
    }
    auto require_known = [&](const std::vector<std::string>& names, const std::string& what) {
        for (const auto& name : names) {
            if (!index.contains(name)) throw InputError("unknown column '" + name + "' in " + what);
            if (std::find(covariates.begin(), covariates.end(), name) == covariates.end()) {
                throw InputError("'" + name + "' in " + what + " is not a model covariate");
            }
        }
    };
    for (const auto& name : covariates) {
        if (!index.contains(name)) throw InputError("unknown column '" + name + "' in covariates");
    }
    require_known(options.interact, "interactions");
    require_known(options.ear_covariates, "ear-level covariates");

    std::vector<std::string> order;
    std::map<std::string, std::vector<Row>> by_participant;
    int n_rows = 0;
    int max_freq = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw InputError("expected " + std::to_string(header.size()) + " fields, found " +
                                 std::to_string(fields.size()),
                             line_no);
        }
        const std::string& id = fields[index["participant_id"]];
        if (id.empty()) throw InputError("empty participant_id", line_no);
        Row row;
        row.line = line_no;
        row.ear = parse_integer(fields[index["ear"]], "ear", line_no);
        row.freq = parse_integer(fields[index["freq"]], "freq", line_no);
        row.y = parse_number(fields[index["y"]], "y", line_no);
        if (row.ear != 1 && row.ear != 2) throw InputError("ear must be 1 or 2", line_no);
        if (row.freq < 1) throw InputError("freq must be at least 1", line_no);
        if (options.freq_levels > 0 && row.freq > options.freq_levels) {
            throw InputError("freq " + std::to_string(row.freq) + " exceeds --freq-levels " +
                                 std::to_string(options.freq_levels),
                             line_no);
        }
        for (const auto& name : covariates) {
            row.covariates.push_back(parse_number(fields[index[name]], name, line_no));
        }
        max_freq = std::max(max_freq, row.freq);
        auto [it, inserted] = by_participant.try_emplace(id);
        if (inserted) order.push_back(id);
        it->second.push_back(std::move(row));
        ++n_rows;
    }
    if (n_rows == 0) throw InputError("data file has a header but no rows");

    LongFormatData data;
    data.n_rows = n_rows;
    const int q = options.freq_levels > 0 ? options.freq_levels : max_freq;
    std::vector<Covariate> specs;
    for (const auto& name : covariates) {
        const auto has = [&](const std::vector<std::string>& v) {
            return std::find(v.begin(), v.end(), name) != v.end();
        };
        specs.push_back({name, has(options.interact), has(options.ear_covariates)});
    }
    data.model = MeanModelSpec::for_link(options.link, q, specs);

    for (const auto& id : order) {
        const auto& rows = by_participant[id];
        const auto n = static_cast<Eigen::Index>(rows.size());
        VectorXd y(n);
        MatrixXd raw(n, static_cast<Eigen::Index>(covariates.size()));
        VectorXi ear(n), freq(n);
        std::set<std::pair<int, int>> cells;
        for (Eigen::Index r = 0; r < n; ++r) {
            const Row& row = rows[static_cast<std::size_t>(r)];
            if (!cells.emplace(row.freq, row.ear).second) {
                throw InputError("participant '" + id + "' repeats ear " + std::to_string(row.ear) +
                                     " at freq " + std::to_string(row.freq),
                                 row.line);
            }
            y(r) = row.y;
            ear(r) = row.ear;
            freq(r) = row.freq;
            for (std::size_t c = 0; c < covariates.size(); ++c) {
                raw(r, static_cast<Eigen::Index>(c)) = row.covariates[c];
                if (!specs[c].ear_level && row.covariates[c] != rows.front().covariates[c]) {
                    throw InputError("participant-level covariate '" + covariates[c] +
                                         "' varies within participant '" + id +
                                         "' (declare it with --ear-covs if it is ear level)",
                                     row.line);
                }
            }
        }
        if (static_cast<int>(cells.size()) != 2 * q) {
            throw InputError("participant '" + id + "' has " + std::to_string(cells.size()) +
                             " of " + std::to_string(2 * q) + " (ear, freq) cells");
        }
        data.clusters.emplace_back(id, y, expand_design(raw, freq, data.model), ear, freq);
    }
    return data;
}

LongFormatData read_long_format(const std::filesystem::path& path,
                                const LongFormatOptions& options) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open data file '" + path.string() + "'");
    return read_long_format(in, options);
}

void write_long_format(std::ostream& out, std::span<const ClusterData> clusters,
                       const std::vector<std::pair<std::string, int>>& columns) {
    out << "participant_id,ear,freq,y";
    for (const auto& [name, col] : columns) out << ',' << name;
    out << '\n';
    const auto old_precision = out.precision(17);
    for (const auto& cl : clusters) {
        for (int p = 0; p < cl.size(); ++p) {
            out << cl.participant_id() << ',' << cl.ear_index()(p) << ',' << cl.freq_index()(p)
                << ',' << cl.y()(p);
            for (const auto& [name, col] : columns) out << ',' << cl.x()(p, col);
            out << '\n';
        }
    }
    out.precision(old_precision);
}

}  // namespace bgee
