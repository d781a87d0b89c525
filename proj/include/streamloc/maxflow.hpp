#pragma once

#include <limits>
#include <queue>
#include <vector>

namespace streamloc {

/// Dinic max-flow on a directed network with real capacities.
class MaxFlow {
public:
    explicit MaxFlow(int nodes, double eps = 1e-12) : graph_(static_cast<std::size_t>(nodes)), eps_(eps) {}

    void add_edge(int from, int to, double capacity, double reverse_capacity = 0.0) {
        graph_[from].push_back({to, static_cast<int>(graph_[to].size()), capacity});
        graph_[to].push_back({from, static_cast<int>(graph_[from].size()) - 1, reverse_capacity});
    }

    double solve(int source, int sink) {
        double flow = 0.0;
        while (build_levels(source, sink)) {
            iter_.assign(graph_.size(), 0);
            while (true) {
                const double pushed = augment(source, sink, std::numeric_limits<double>::infinity());
                if (pushed <= eps_) break;
                flow += pushed;
            }
        }
        return flow;
    }

    /// Nodes that cannot reach `sink` through residual edges after solve().
    /// This is the largest source side among all minimum cuts.
    [[nodiscard]] std::vector<bool> source_side_max(int sink) const {
        std::vector<bool> reaches(graph_.size(), false);
        std::queue<int> q;
        reaches[sink] = true;
        q.push(sink);
        while (!q.empty()) {
            const int v = q.front();
            q.pop();
            for (const auto& e : graph_[v]) {
                // e is v -> u; the paired edge u -> v has residual graph_[u][e.rev].cap
                const auto& back = graph_[e.to][e.rev];
                if (!reaches[e.to] && back.cap > eps_) {
                    reaches[e.to] = true;
                    q.push(e.to);
                }
            }
        }
        std::vector<bool> source_side(graph_.size());
        for (std::size_t i = 0; i < graph_.size(); ++i) source_side[i] = !reaches[i];
        return source_side;
    }

private:
    struct Edge {
        int to;
        int rev;
        double cap;
    };

    bool build_levels(int source, int sink) {
        level_.assign(graph_.size(), -1);
        std::queue<int> q;
        level_[source] = 0;
        q.push(source);
        while (!q.empty()) {
            const int v = q.front();
            q.pop();
            for (const auto& e : graph_[v]) {
                if (e.cap > eps_ && level_[e.to] < 0) {
                    level_[e.to] = level_[v] + 1;
                    q.push(e.to);
                }
            }
        }
        return level_[sink] >= 0;
    }

    double augment(int v, int sink, double limit) {
        if (v == sink) return limit;
        for (int& i = iter_[v]; i < static_cast<int>(graph_[v].size()); ++i) {
            Edge& e = graph_[v][i];
            if (e.cap > eps_ && level_[e.to] == level_[v] + 1) {
                const double d = augment(e.to, sink, std::min(limit, e.cap));
                if (d > eps_) {
                    e.cap -= d;
                    graph_[e.to][e.rev].cap += d;
                    return d;
                }
            }
        }
        return 0.0;
    }

    std::vector<std::vector<Edge>> graph_;
    std::vector<int> level_;
    std::vector<int> iter_;
    double eps_;
};

}  // namespace streamloc
