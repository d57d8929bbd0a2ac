// even-indexed entries first, then odd-indexed ones
void deinterleave(double* y, double* x, int n) {
    for (int i = 0; i < n / 2; ++i) {
        y[i] = x[2 * i];
        y[i + n / 2] = x[2 * i + 1];
    }
}
