"""Independent reference values for the frozen oracle tests.

mpmath at 50 digits with explicit loops; shares no code with the package.
Run: python tools/oracle_values.py
"""
import mpmath as mp
mp.mp.dps = 50

# fixed tanh net D=2,H=2,M=1 ; rows w_j=(w1,w2,bias) with x~=(x1,x2,-1)
W = [[0.3, -0.7, 0.2], [1.1, 0.4, -0.5]]
V = [[0.8], [-1.3]]
X = [[0.5, -0.25], [-0.9, 0.6], [0.1, 0.2]]
Y = [[0.4], [-0.2], [0.05]]
def xt(x): return [mp.mpf(x[0]), mp.mpf(x[1]), mp.mpf(-1)]
def f(x, W=W, V=V):
    return sum(mp.mpf(V[j][0]) * mp.tanh(sum(mp.mpf(W[j][k]) * xt(x)[k] for k in range(3))) for j in range(2))
L = sum((f(x) - y[0]) ** 2 / 2 for x, y in zip(X, Y))
print("loss", mp.nstr(L, 20))
# gradient by hand formula
g = []
for j in range(2):
    for k in range(3):
        s = 0
        for x, y in zip(X, Y):
            z = sum(mp.mpf(W[j][k2]) * xt(x)[k2] for k2 in range(3))
            s += (f(x) - y[0]) * V[j][0] * (1 - mp.tanh(z) ** 2) * xt(x)[k]
        g.append(s)
for j in range(2):
    s = 0
    for x, y in zip(X, Y):
        z = sum(mp.mpf(W[j][k2]) * xt(x)[k2] for k2 in range(3))
        s += (f(x) - y[0]) * mp.tanh(z)
    g.append(s)
print("grad", [mp.nstr(v, 20) for v in g])
# G, F for unit 1 (0-based)
r = 1
G = [[0] * 3 for _ in range(3)]; F = [0] * 3
for x, y in zip(X, Y):
    z = sum(mp.mpf(W[r][k]) * xt(x)[k] for k in range(3))
    t = mp.tanh(z); res = f(x) - y[0]
    for a in range(3):
        F[a] += res * (1 - t * t) * xt(x)[a]
        for b in range(3):
            G[a][b] += res * V[r][0] * (-2 * t * (1 - t * t)) * xt(x)[a] * xt(x)[b]
print("G", [[mp.nstr(v, 20) for v in row] for row in G])
print("F", [mp.nstr(v, 20) for v in F])

# Gaussian KL, full covariances
mq = mp.matrix([0.1, -0.2, 0.3]); mpv = mp.matrix([0, 0, 0])
Cq = mp.matrix([[0.5, 0.1, 0], [0.1, 0.4, 0.05], [0, 0.05, 0.3]])
Cp = mp.matrix([[2, 0.3, 0.1], [0.3, 1.5, 0], [0.1, 0, 1]])
Pi = Cp ** -1
d = mpv - mq
kl = (mp.log(mp.det(Cp) / mp.det(Cq)) + sum((Pi * Cq)[i, i] for i in range(3)) + (d.T * Pi * d)[0] - 3) / 2
print("gkl", mp.nstr(kl, 20))

# kl_smooth from explicit prior/posterior covariances
sig, tau = mp.mpf(10), mp.mpf('0.01')
Hm = mp.matrix([[2, 0.5], [0.5, 1]]); S = mp.matrix([[3]]); theta = mp.matrix([0.3, -0.4, 1.2, 0.5])
# blocks: narrow (2), surplus v (1, posterior var = sigma^2), surplus w (S)
Cq = mp.zeros(4); Cp = mp.eye(4) * sig ** 2
Hi = Hm ** -1
for i in range(2):
    for j in range(2): Cq[i, j] = tau ** 2 * Hi[i, j]
Cq[2, 2] = sig ** 2
Cq[3, 3] = tau ** 2 / 3
Pi = Cp ** -1
kl = (mp.log(mp.det(Cp) / mp.det(Cq)) + sum((Pi * Cq)[i, i] for i in range(4)) + (theta.T * Pi * theta)[0] - 4) / 2
print("kl_smooth_full", mp.nstr(kl, 20), "norm", mp.nstr(mp.norm(theta), 20))
