"""k-step reachability: which nodes an STC layer with neighborhood size k can see."""

from tgcn.graph import from_edges, reachability

# a 5-node path 0-1-2-3-4
path = from_edges(5, [(i, i + 1) for i in range(4)])
for k in range(4):
    print(f"k={k}")
    print(reachability(path, k).bits.astype(int))
