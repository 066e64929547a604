// Brute-force reference implementations the test suites check the library
// against. Everything here is written from the contract alone and stays
// independent of the library code paths.
#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace ref {

struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

double area(const Box& b);
double iou(const Box& a, const Box& b);
double ioa(const Box& a, const Box& b);

struct ScoredBox {
  Box box;
  double score = 0;
};

// greedy hard suppression; ties break to larger area then input order
std::vector<std::size_t> nms_naive(const std::vector<ScoredBox>& boxes, double thr);

struct Kept {
  std::size_t index = 0;
  double score = 0;
};

// iterative pop-the-max soft suppression with Gaussian decay
std::vector<Kept> nms_soft(const std::vector<ScoredBox>& boxes, double sigma, double floor);

struct Det {
  std::string image;
  std::string label;
  double score = 0;
  Box box;
};

struct Gt {
  std::string image;
  std::string label;
  Box box;
  bool group_of = false;
};

struct EvalOutcome {
  std::map<std::string, double> ap;  // categories with ground truth only
  std::map<std::string, int> n_gt;
  double map = 0;
};

EvalOutcome evaluate(std::vector<Det> dets, const std::vector<Gt>& gts, double iou_thr,
                     double ioa_thr);

// duplicate every detection to all transitive parents, skipping records whose
// (image, parent, box) already exists
std::vector<Det> expand(const std::vector<Det>& dets,
                        const std::multimap<std::string, std::string>& child_to_parent);

}  // namespace ref
