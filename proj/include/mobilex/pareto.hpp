#pragma once

#include <string>
#include <utility>
#include <vector>

namespace mobilex {

// One model on the accuracy/latency plane; lower is better on both axes.
struct ParetoPoint {
    std::string label;
    double error = 0.0;
    double time_ms = 0.0;

    void validate() const;  // finite and > 0
};

struct ParetoResult {
    std::vector<ParetoPoint> front;      // non-dominated, ordered by time_ms
    std::vector<ParetoPoint> dominated;  // input order
};

// Sort-and-sweep in O(n log n). p dominates q iff p is <= on both axes and
// strictly better on at least one; exact duplicates are both kept.
ParetoResult pareto_front(const std::vector<ParetoPoint>& points);

// CSV rows `label,error,time_ms`; a `label,...` header row is accepted.
std::vector<ParetoPoint> read_pareto_csv(const std::string& path);
void write_pareto_csv(const std::string& path, const std::vector<ParetoPoint>& points);

// Scatter of every point with the front highlighted and joined by a polyline.
std::string render_pareto_svg(const std::vector<ParetoPoint>& all,
                              const std::vector<ParetoPoint>& front);

}  // namespace mobilex
