#pragma once

namespace esdm {

double digamma(double x);
double trigamma(double x);

// log Beta(a, b).
double log_beta(double a, double b);

// I_x(a, b) by continued fraction, relative tolerance 1e-12.
double regularized_incomplete_beta(double a, double b, double x);

double log_binomial_coefficient(int n, int k);

double logit(double p);
double inv_logit(double x);
// log(sigmoid(x)) and log(1 - sigmoid(x)) without cancellation.
double log_inv_logit(double x);
double log1m_inv_logit(double x);

double log_sum_exp(double a, double b);

}  // namespace esdm
