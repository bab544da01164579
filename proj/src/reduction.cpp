#include "bgee/reduction.hpp"

#include <map>
#include <stdexcept>

namespace bgee {

namespace {

struct EarPair {
    int left = -1;   // row of ear 1
    int right = -1;  // row of ear 2
};

// Rows are canonical (frequency, then ear), so the map iterates by frequency.
std::map<int, EarPair> pair_rows(const ClusterData& cluster) {
    std::map<int, EarPair> rows;
    for (int p = 0; p < cluster.size(); ++p) {
        EarPair& pair = rows[cluster.freq_index()(p)];
        (cluster.ear_index()(p) == 1 ? pair.left : pair.right) = p;
    }
    for (const auto& [freq, pair] : rows) {
        if (pair.left < 0 || pair.right < 0) {
            throw std::invalid_argument("cluster " + cluster.participant_id() +
                                        ": frequency " + std::to_string(freq) +
                                        " is missing an ear");
        }
    }
    return rows;
}

ReducedCluster reduce(const ClusterData& cluster, ReductionKind kind) {
    const auto rows = pair_rows(cluster);
    const auto q = static_cast<Eigen::Index>(rows.size());
    ReducedCluster out;
    out.participant_id = cluster.participant_id();
    out.kind = kind;
    out.y.resize(q);
    out.x.resize(q, cluster.n_columns());
    out.freq_index.resize(q);
    out.source_ear.resize(q);

    Eigen::Index r = 0;
    for (const auto& [freq, pair] : rows) {
        const double y1 = cluster.y()(pair.left);
        const double y2 = cluster.y()(pair.right);
        out.freq_index(r) = freq;
        if (kind == ReductionKind::worse) {
            const int pick = y2 > y1 ? pair.right : pair.left;
            out.y(r) = cluster.y()(pick);
            out.x.row(r) = cluster.x().row(pick);
            out.source_ear(r) = cluster.ear_index()(pick);
        } else {
            out.y(r) = 0.5 * (y1 + y2);
            out.x.row(r) = 0.5 * (cluster.x().row(pair.left) + cluster.x().row(pair.right));
            out.source_ear(r) = 0;
        }
        ++r;
    }
    return out;
}

}  // namespace

ClusterData ReducedCluster::to_cluster() const {
    return ClusterData(participant_id, y, x, VectorXi::Ones(y.size()), freq_index);
}

ReducedCluster worse_ear(const ClusterData& cluster) {
    return reduce(cluster, ReductionKind::worse);
}

ReducedCluster average_ear(const ClusterData& cluster) {
    return reduce(cluster, ReductionKind::average);
}

}  // namespace bgee
