# Occlusion-pruned neighbour graph: recall versus expansion budget.
import time
import numpy as np
from nnkernel.ann import SearchParams, brute_force_knn, build_graph, search, save_graph, load_graph

rng = np.random.default_rng(1)
points = rng.standard_normal((5000, 32))
queries = rng.standard_normal((30, 32))

t = time.perf_counter()
graph = build_graph(points, max_degree=32)
degrees = [len(a) for a in graph.adjacency]
print(f"built in {time.perf_counter() - t:.1f}s, mean degree {np.mean(degrees):.1f}, max {max(degrees)}")

truth = [{i for i, _ in brute_force_knn(q, points, 50)} for q in queries]

for budget in (50, 200, 500, 1500, graph.node_count):
    params = SearchParams(k=50, backtrack_budget=budget)
    t = time.perf_counter()
    found = [{i for i, _ in search(graph, points, q, params)} for q in queries]
    ms = 1000 * (time.perf_counter() - t) / len(queries)
    recall = np.mean([len(a & b) / 50 for a, b in zip(found, truth)])
    print(f"budget {budget:5d}: recall@50 {recall:.3f}  {ms:.1f} ms/query")

# the graph file is a flat little-endian adjacency list
save_graph(graph, "/tmp/demo.nnkg")
print("reloaded graph equal:", load_graph("/tmp/demo.nnkg") == graph)
