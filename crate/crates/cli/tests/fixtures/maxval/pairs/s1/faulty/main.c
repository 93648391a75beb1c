#include <stdio.h>

int main(void) {
    int n;
    if (scanf("%d", &n) != 1) return 1;
    if (n == 0) {
        printf("empty\n");
        return 0;
    }
    int best = 0;
    for (int i = 0; i < n; i++) {
        int x;
        scanf("%d", &x);
        if (x > best) best = x;
    }
    printf("%d\n", best);
    return 0;
}
