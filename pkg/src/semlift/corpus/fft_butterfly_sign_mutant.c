    #include <math.h> 
    #include <stdlib.h>
    #define M_PI 3.14159265358979323846
    void fft_recursive(double* data, int n) {
        if (n <= 1) return;
        // Allocate temporary storage for half-size FFTs.
        double* even = (double*)malloc(n * sizeof(double));
        double* odd = (double*)malloc(n * sizeof(double));
        for (int i = 0; i < n / 2; ++i) {
            even[2 * i] = data[4 * i];
            even[2 * i + 1] = data[4 * i + 1];
            odd[2 * i] = data[4 * i + 2];
            odd[2 * i + 1] = data[4 * i + 3];
        }
        // Recursively compute FFTs.
        fft_recursive(even, n / 2); 
        fft_recursive(odd, n / 2);
        for (int i = 0; i < n / 2; ++i) {
            double theta = -2.0 * M_PI * i / n;
            double wr = cos(theta);
            double wi = sin(theta);
            // Twiddle factor multiplication.
            double real = odd[2 * i] * wr - odd[2 * i + 1] * wi;
            double imag = odd[2 * i] * wi + odd[2 * i + 1] * wr;
            data[2 * i] = even[2 * i] - real;
            data[2 * i + 1] = even[2 * i + 1] + imag;
            data[2 * (i + n / 2)] = even[2 * i] - real;
            data[2 * (i + n / 2) + 1] = even[2 * i + 1] - imag;
        }
        // Cleanup.
        free(even); 
        free(odd);
    }
