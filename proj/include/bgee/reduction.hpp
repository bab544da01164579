#pragma once

#include "bgee/model.hpp"

#include <string>

namespace bgee {

enum class ReductionKind { worse, average };

/// One outcome per frequency. For worse-ear reductions `source_ear` records
/// which ear supplied each row; it is 0 for averaged rows.
struct ReducedCluster {
    std::string participant_id;
    VectorXd y;
    MatrixXd x;
    VectorXi freq_index;
    VectorXi source_ear;
    ReductionKind kind = ReductionKind::worse;

    /// Single-ear cluster (ear label 1 on every row) for the estimator.
    ClusterData to_cluster() const;
};

/// Per frequency, the larger of the two ear outcomes with that ear's design
/// row; ties go to ear 1. Throws std::invalid_argument when a frequency lacks
/// either ear.
ReducedCluster worse_ear(const ClusterData& cluster);

/// Per frequency, the mean of the two ear outcomes and of their design rows.
ReducedCluster average_ear(const ClusterData& cluster);

}  // namespace bgee
