#pragma once

#include <span>
#include <vector>

namespace gradal::stats {

double mean(std::span<const double> xs);
double sample_sd(std::span<const double> xs);  // denominator n-1; 0 for n<2

double pearson(std::span<const double> xs, std::span<const double> ys);

// Ranks with ties assigned the average rank.
std::vector<double> ranks(std::span<const double> xs);
double spearman(std::span<const double> xs, std::span<const double> ys);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> xs);
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace gradal::stats
